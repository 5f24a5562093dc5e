import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ap_oracle, box_iou_cells, geodesic_scipy, random_detection_set
from posereg import metrics as m
from posereg import rotations as rot

DEG = np.pi / 180


def rz_deg(a):
    return rot.rot_z(np.deg2rad(a))


class TestMedian:
    def test_exact_predictions(self):
        rs = rot.random_rotations(np.random.default_rng(0), 6)
        recs = [m.EvalRecord("car" if i % 2 else "bus", r, r) for i, r in enumerate(rs)]
        out = m.median_angle_error(recs)
        assert out == {"bus": 0.0, "car": 0.0, "Mean": 0.0}

    def test_three_records(self):
        recs = [m.EvalRecord("car", np.eye(3), rz_deg(a)) for a in (30, 10, 20)]
        assert m.median_angle_error(recs)["car"] == pytest.approx(20.0, abs=1e-9)

    def test_sort_oracle(self):
        rng = np.random.default_rng(1)
        for n in range(1, 30):
            gt, pred = rot.random_rotations(rng, n), rot.random_rotations(rng, n)
            recs = [m.EvalRecord("car", g, p) for g, p in zip(gt, pred)]
            errs = sorted(math.degrees(geodesic_scipy(g, p)) for g, p in zip(gt, pred))
            ref = errs[n // 2] if n % 2 else (errs[n // 2 - 1] + errs[n // 2]) / 2
            assert abs(m.median_angle_error(recs)["car"] - ref) < 1e-9

    def test_mean_over_categories(self):
        recs = [m.EvalRecord("car", np.eye(3), rz_deg(10)), m.EvalRecord("bus", np.eye(3), rz_deg(30))]
        assert m.median_angle_error(recs)["Mean"] == pytest.approx(20.0)

    def test_bi_invariance(self):
        rng = np.random.default_rng(2)
        gt, pred = rot.random_rotations(rng, 15), rot.random_rotations(rng, 15)
        g = rot.random_rotations(rng, 1)[0]
        a = m.median_angle_error([m.EvalRecord("car", x, y) for x, y in zip(gt, pred)])
        b = m.median_angle_error([m.EvalRecord("car", g @ x, g @ y) for x, y in zip(gt, pred)])
        c = m.median_angle_error([m.EvalRecord("car", x @ g, y @ g) for x, y in zip(gt, pred)])
        assert abs(a["car"] - b["car"]) < 1e-9 and abs(a["car"] - c["car"]) < 1e-9

    def test_empty(self):
        with pytest.raises(ValueError):
            m.median_angle_error([])


class TestCosts:
    def test_self(self):
        s = rot.random_rotations(np.random.default_rng(3), 20)
        assert m.cost1(s, s) < 1e-7
        assert m.cost2(s, s, 0.1) >= 1
        assert m.cost2(s[:1], s[:1], 0.1) == 1

    def test_constructed_pair(self):
        r = rot.random_rotations(np.random.default_rng(4), 1)[0]
        other = r @ rot.exp_map(0.3 * np.array([0.6, 0.0, 0.8]))
        assert m.cost1([other], [r]) == pytest.approx(0.3, abs=1e-12)
        assert m.cost2([other], [r], 0.3 + 1e-9) == 1
        assert m.cost2([other], [r], 0.1) == 0

    def test_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            test = rot.random_rotations(rng, int(rng.integers(1, 25)))
            base = rot.random_rotations(rng, int(rng.integers(1, 25)))
            # some training poses near test poses so cost2 counts are nonzero
            train = np.concatenate([base, test[:3] @ rot.exp_map(rng.normal(0, 0.05, (min(3, len(test)), 3)))])
            d = [[geodesic_scipy(t, r) for r in train] for t in test]
            assert abs(m.cost1(test, train) - np.mean([min(row) for row in d])) < 1e-9
            assert m.cost2(test, train, 0.1) == np.mean([sum(x < 0.1 for x in row) for row in d])

    def test_errors(self):
        with pytest.raises(ValueError):
            m.cost1(np.zeros((0, 3, 3)), np.eye(3)[None])
        with pytest.raises(ValueError):
            m.cost2(np.eye(3)[None], np.eye(3)[None], 0.0)

    def test_with_flips(self):
        r = rot.viewpoint_to_mat(0.4, 1.0, 0.2)
        both = m.with_flips([r])
        np.testing.assert_allclose(both[1], rot.viewpoint_to_mat(*rot.flip_viewpoint((0.4, 1.0, 0.2))), atol=1e-12)


class TestIoU:
    def test_values(self):
        assert m.iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
        assert m.iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
        assert m.iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0
        assert m.iou((0, 0, 1, 1), (0.5, 0, 1.5, 1)) == pytest.approx(1 / 3, abs=1e-15)
        with pytest.raises(ValueError):
            m.iou((0, 0, 0, 1), (0, 0, 1, 1))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 12), min_size=8, max_size=8))
    def test_cell_count_oracle(self, v):
        a = (v[0], v[1], v[0] + 1 + v[2], v[1] + 1 + v[3])
        b = (v[4], v[5], v[4] + 1 + v[6], v[5] + 1 + v[7])
        assert m.iou(a, b) == pytest.approx(box_iou_cells(a, b), abs=1e-12)
        assert m.iou(a, b) == m.iou(b, a)
        assert (m.iou(a, b) == 1.0) == (a == b)


class TestMatching:
    def gt(self, box, cat="car", image=None):
        return m.EvalRecord(cat, np.eye(3), gt_box=box, image=image)

    def det(self, box, conf, cat="car", image=None):
        return m.EvalRecord(cat, pred_rotation=np.eye(3), det_box=box, confidence=conf, image=image)

    def test_single(self):
        out = m.match_detections([self.gt((0, 0, 10, 10))], [self.det((1, 1, 10, 10), 0.5)])
        assert out[0].det_index == 0 and out[0].iou == pytest.approx(0.81)

    def test_highest_iou_wins(self):
        dets = [self.det((5, 5, 15, 15), 0.9), self.det((1, 0, 10, 10), 0.1)]
        assert m.match_detections([self.gt((0, 0, 10, 10))], dets)[0].det_index == 1

    def test_ties(self):
        dets = [self.det((0, 0, 10, 10), 0.2), self.det((0, 0, 10, 10), 0.7), self.det((0, 0, 10, 10), 0.7)]
        assert m.match_detections([self.gt((0, 0, 10, 10))], dets)[0].det_index == 1

    def test_unmatched_and_category_image_separation(self):
        gts = [self.gt((0, 0, 10, 10)), self.gt((0, 0, 10, 10), cat="bus"), self.gt((0, 0, 10, 10), image="b")]
        dets = [self.det((0, 0, 10, 10), 0.5), self.det((50, 50, 60, 60), 0.9, cat="bus")]
        out = m.match_detections(gts, dets)
        assert [o.det_index for o in out] == [0, None, None]
        assert len(m.matched_records(gts, dets)) == 1

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            recs = random_detection_set(rng)
            gts = [r for r in recs if r.gt_box is not None]
            dets = [r for r in recs if r.det_box is not None]
            for mt in m.match_detections(gts, dets):
                g = gts[mt.gt_index]
                cands = [(box_iou_cells(g.gt_box, d.det_box), d.confidence, -i) for i, d in enumerate(dets)
                         if d.image == g.image and d.category == g.category]
                cands = [c for c in cands if c[0] > 0]
                if not cands:
                    assert mt.det_index is None
                else:
                    assert mt.det_index == -max(cands)[2]


class TestAveragePrecision:
    def test_interpolated_ap(self):
        assert m.interpolated_ap([1, 1, 1], 3) == 1.0
        assert m.interpolated_ap([0, 0], 2) == 0.0
        assert m.interpolated_ap([], 2) == 0.0
        assert math.isnan(m.interpolated_ap([0], 0))
        # envelope lifts the 1/3 precision at rank 3 to the 1/2 reached at rank 4
        assert m.interpolated_ap([1, 0, 0, 1], 2) == pytest.approx(0.5 * 1 + 0.5 * 0.5)

    def hand_set(self):
        good, bad = np.eye(3), rz_deg(90)
        g = [m.EvalRecord("car", np.eye(3), gt_box=(0, 0, 10, 10)),
             m.EvalRecord("car", np.eye(3), gt_box=(20, 0, 30, 10)),
             m.EvalRecord("car", np.eye(3), gt_box=(40, 0, 50, 10))]
        d = [m.EvalRecord("car", pred_rotation=good, det_box=(0, 0, 10, 10), confidence=0.9),
             m.EvalRecord("car", pred_rotation=good, det_box=(0, 0, 10, 9), confidence=0.8),  # duplicate
             m.EvalRecord("car", pred_rotation=bad, det_box=(20, 0, 30, 10), confidence=0.7),  # pose wrong
             m.EvalRecord("car", pred_rotation=good, det_box=(40, 0, 50, 10), confidence=0.6)]
        return g + d

    def test_hand_computed_arp(self):
        # ranked TP/FP: 1 0 0 1 with 3 positives -> precision 1 at recall 1/3, 1/2 at recall 2/3
        out = m.arp(self.hand_set(), angle_threshold=np.pi / 6)
        assert out["car"] == pytest.approx(1 / 3 + 0.5 / 3, abs=1e-12)
        # without the pose test: 1 0 1 1 -> (1 + 3/4 + 3/4) / 3
        assert m.detection_ap(self.hand_set())["car"] == pytest.approx(5 / 6, abs=1e-12)

    def test_perfect_and_failing(self):
        rs = rot.random_rotations(np.random.default_rng(7), 4)
        gts = [m.EvalRecord("car", r, gt_box=(10 * i, 0, 10 * i + 5, 5)) for i, r in enumerate(rs)]
        perfect = [m.EvalRecord("car", pred_rotation=r, det_box=(10 * i, 0, 10 * i + 5, 5), confidence=0.5)
                   for i, r in enumerate(rs)]
        wrong = [m.EvalRecord("car", pred_rotation=r @ rz_deg(120), det_box=d.det_box, confidence=0.5)
                 for r, d in zip(rs, perfect)]
        assert m.arp(gts + perfect, np.pi / 6)["car"] == 1.0
        assert m.arp(gts + wrong, np.pi / 6)["car"] == 0.0
        for n in m.AVP_BINS:
            assert m.avp(gts + perfect, n)["car"] == 1.0

    def test_missing_fields(self):
        recs = [m.EvalRecord("car", np.eye(3), gt_box=(0, 0, 1, 1)),
                m.EvalRecord("car", pred_rotation=np.eye(3), det_box=(0, 0, 1, 1))]
        with pytest.raises(ValueError, match="confidence"):
            m.arp(recs)

    def test_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            recs = random_detection_set(rng)
            theta = rng.uniform(0.1, 1.0)
            ok = lambda d, g: geodesic_scipy(g.gt_rotation, d.pred_rotation) < theta
            ref = ap_oracle(recs, ok, box_iou_cells)
            got = m.arp(recs, theta)
            for cat, v in ref.items():
                assert (math.isnan(v) and math.isnan(got[cat])) or abs(got[cat] - v) < 1e-9

    def test_arp_at_pi_is_detection_ap_and_avp_bounded(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            recs = random_detection_set(rng)
            det = m.detection_ap(recs)
            a = m.arp(recs, np.pi)
            for c in det:
                assert (math.isnan(det[c]) and math.isnan(a[c])) or a[c] == det[c]
            for n in m.AVP_BINS:
                v = m.avp(recs, n)
                assert all(math.isnan(det[c]) or v[c] <= det[c] for c in det)


class TestAzimuthBins:
    def test_bin_convention(self):
        assert m.azimuth_bin(0.0, 4) == 0
        assert m.azimuth_bin(np.deg2rad(44.9), 4) == 0
        assert m.azimuth_bin(np.deg2rad(45.0), 4) == 1
        assert m.azimuth_bin(np.deg2rad(-45.0), 4) == 0
        assert m.azimuth_bin(np.deg2rad(-45.1), 4) == 3
        assert m.azimuth_bin(np.deg2rad(180.0), 24) == 12

    def avp_single(self, az_gt, az_pred, n):
        recs = [m.EvalRecord("car", rot.viewpoint_to_mat(np.deg2rad(az_gt), 0.8, 0.1), gt_box=(0, 0, 5, 5)),
                m.EvalRecord("car", pred_rotation=rot.viewpoint_to_mat(np.deg2rad(az_pred), 0.8, 0.1),
                             det_box=(0, 0, 5, 5), confidence=1.0)]
        return m.avp(recs, n)["car"]

    def test_four_bins_example(self):
        assert self.avp_single(10, 80, 4) == 0.0
        assert self.avp_single(10, 40, 4) == 1.0

    def test_centered_bins_are_not_nested(self):
        # centered bins of different counts do not refine each other, so a
        # finer binning can accept a prediction a coarser one rejects
        assert self.avp_single(8, 12, 16) == 0.0
        assert self.avp_single(8, 12, 24) == 1.0
        assert self.avp_single(40, 50, 4) == 0.0
        assert self.avp_single(40, 50, 8) == 1.0

    def test_invalid_bins(self):
        with pytest.raises(ValueError):
            m.avp([], 12)


class TestRecordFiles:
    def entries(self, n=5, box=False, conf=False):
        rng = np.random.default_rng(10)
        out = []
        for i, r in enumerate(rot.random_rotations(rng, n)):
            b = m.BoundingBox(1.0 * i, 2.0, 1.0 * i + 3.5, 7.0) if box else None
            out.append(m.RecordEntry(f"img{i}", "car" if i % 2 else "bus", r, b, 0.1 * i if conf else None))
        return out

    @pytest.mark.parametrize("box,conf", [(False, False), (True, False), (True, True)])
    def test_matrix_round_trip(self, tmp_path, box, conf):
        es = self.entries(box=box, conf=conf)
        m.write_records(es, tmp_path / "r.csv")
        back = m.read_records(tmp_path / "r.csv")
        for a, b in zip(es, back):
            assert (a.id, a.category, a.box, a.confidence) == (b.id, b.category, b.box, b.confidence)
            assert a.rotation.tobytes() == b.rotation.tobytes()

    def test_angle_round_trip(self, tmp_path):
        es = self.entries()
        m.write_records(es, tmp_path / "r.csv", angles=True)
        back = m.read_records(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[1] == "id,category,az,el,ct"
        for a, b in zip(es, back):
            assert np.abs(a.rotation - b.rotation).max() < 1e-12

    def test_angles_are_degrees(self):
        text = "# posereg records v1\nid,category,az,el,ct\nx,car,90,0,0\n"
        np.testing.assert_allclose(m.parse_records(text)[0].rotation, rot.rot_z(np.pi / 2), atol=1e-15)

    def test_errors(self):
        head = "# posereg records v1\nid,category,az,el,ct\n"
        cases = [("", ":1:"), ("# posereg records v1\n", ":2:"), (head + "a,car,1,2\n", ":3:"),
                 (head + "a,car,1,2,3\nb,car,1,2,3,0,0,1,1\n", ":4:"), (head + "a,car,1,x,3\n", ":3:"),
                 (head + "a,car,1,2,3,5,0,1,1\n", ":3:.*invalid box"),
                 ("# posereg records v1\nid,category\na,car,1,0,0,0,1,0,0,0,2\n", "orthonormal")]
        for text, where in cases:
            with pytest.raises(m.RecordFormatError, match=where):
                m.parse_records(text, "f")

    def test_pairing(self):
        gt = self.entries()
        pred = list(reversed(self.entries()))
        recs = m.pair_records(gt, pred)
        assert [r.image for r in recs] == [e.id for e in gt]
        with pytest.raises(m.RecordFormatError, match="no prediction"):
            m.pair_records(gt, pred[1:])
        with pytest.raises(m.RecordFormatError, match="duplicate"):
            m.pair_records(gt, pred + pred[:1])
        with pytest.raises(m.RecordFormatError, match="without ground truth"):
            m.pair_records(gt[1:], pred)

    def test_detection_records(self):
        with pytest.raises(m.RecordFormatError, match="box"):
            m.detection_records(self.entries(), self.entries(box=True, conf=True))
        recs = m.detection_records(self.entries(box=True), self.entries(box=True, conf=True))
        assert m.detection_ap(recs)["Mean"] == 1.0


def test_format_table():
    text = m.format_table({"ours": {"car": 5.0, "aero": 10.0, "zebra": 1.0, "Mean": 16 / 3}})
    header, row = text.splitlines()
    assert header.split() == ["Expt.", "aero", "car", "zebra", "Mean"]
    assert row.split() == ["ours", "10.00", "5.00", "1.00", "5.33"]
