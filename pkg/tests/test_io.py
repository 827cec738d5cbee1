import json

import numpy as np
import pytest

from rfit.errors import SchemaError
from rfit.io import (
    dumps_instance,
    dumps_report,
    emit_instance,
    emit_report,
    ingest,
    instance_from_dict,
    instance_to_dict,
    load_report,
    read_influence_csv,
    validate_report,
    write_influence_csv,
    write_plot_data,
)
from rfit.pipeline import generate, robust_fit


def write(tmp_path, text, name="inst.json"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestInstanceRoundTrip:
    @pytest.mark.parametrize("kind", ["line", "homography", "triangulation"])
    def test_emit_then_ingest(self, kind, tmp_path):
        inst = generate(kind, 9, 6, seed=2)
        emit_instance(inst, tmp_path / "a.json")
        back = ingest(tmp_path / "a.json")
        assert back == inst
        assert instance_to_dict(back) == instance_to_dict(inst)

    def test_dict_round_trip_without_file(self):
        inst = generate("line", 5, 3, seed=0)
        assert instance_from_dict(json.loads(dumps_instance(inst))) == inst

    def test_cameras_deduplicated(self):
        doc = instance_to_dict(generate("triangulation", 8, 8, seed=1))
        assert len(doc["cameras"]) == len({tuple(map(tuple, c)) for c in doc["cameras"]})
        assert all(0 <= p["camera"] < len(doc["cameras"]) for p in doc["points"])

    def test_one_point_per_line(self):
        text = dumps_instance(generate("line", 4, 4, seed=0))
        assert sum(line.strip().startswith("[") for line in text.splitlines()) == 4

    def test_minimal_line(self, tmp_path):
        inst = ingest(write(tmp_path, '{"kind": "line", "eps": 0.3, "points": [[0, 1], [1, 2]]}'))
        assert inst.n == 2 and inst.eps == 0.3
        assert inst.truth_x is None and inst.truth_labels is None
        assert inst.provenance["source"] == "ingested"
        assert inst.provenance["path"].endswith("inst.json")

    def test_generated_provenance_kept(self, tmp_path):
        inst = generate("line", 4, 3, seed=11)
        emit_instance(inst, tmp_path / "a.json")
        assert ingest(tmp_path / "a.json").provenance == inst.provenance


class TestSchemaErrors:
    def test_missing_cameras(self, tmp_path):
        text = '{"kind": "triangulation", "eps": 1.0, "points": [{"camera": 0, "uv": [1, 2]}]}'
        with pytest.raises(SchemaError, match="cameras") as exc:
            ingest(write(tmp_path, text))
        assert exc.value.field == "cameras"

    def test_missing_eps(self, tmp_path):
        with pytest.raises(SchemaError, match="eps"):
            ingest(write(tmp_path, '{"kind": "line", "points": [[0, 1]]}'))

    def test_bad_point_reports_line(self, tmp_path):
        text = '{\n  "kind": "line",\n  "eps": 0.3,\n  "points": [\n    [0, 1],\n    [1, "x"],\n    [2, 3]\n  ]\n}\n'
        with pytest.raises(SchemaError) as exc:
            ingest(write(tmp_path, text))
        assert exc.value.field == "points[1][1]"
        assert exc.value.line == 6
        assert "line 6" in str(exc.value)

    def test_wrong_point_shape_for_kind(self, tmp_path):
        text = '{"kind": "homography", "eps": 4, "points": [[0, 1]]}'
        with pytest.raises(SchemaError) as exc:
            ingest(write(tmp_path, text))
        assert exc.value.field.startswith("points[0]")

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(SchemaError) as exc:
            ingest(write(tmp_path, '{"kind": "circle", "eps": 1, "points": [[0, 1]]}'))
        assert exc.value.field == "kind"

    def test_nonpositive_eps(self, tmp_path):
        with pytest.raises(SchemaError) as exc:
            ingest(write(tmp_path, '{"kind": "line", "eps": 0, "points": [[0, 1]]}'))
        assert exc.value.field == "eps"

    def test_camera_index_out_of_range(self, tmp_path):
        cam = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 5]]
        doc = {"kind": "triangulation", "eps": 1, "cameras": [cam], "points": [{"camera": 3, "uv": [0, 0]}]}
        with pytest.raises(SchemaError) as exc:
            ingest(write(tmp_path, json.dumps(doc)))
        assert exc.value.field == "points[0].camera"

    def test_label_count(self, tmp_path):
        doc = {"kind": "line", "eps": 1, "points": [[0, 1], [1, 1]], "truth": {"labels": [True]}}
        with pytest.raises(SchemaError) as exc:
            ingest(write(tmp_path, json.dumps(doc)))
        assert exc.value.field == "truth.labels"

    def test_invalid_json(self, tmp_path):
        with pytest.raises(SchemaError) as exc:
            ingest(write(tmp_path, '{"kind": "line",\n "eps": }'))
        assert exc.value.line == 2

    def test_unreadable(self, tmp_path):
        with pytest.raises(SchemaError):
            ingest(tmp_path / "missing.json")

    def test_extra_property(self, tmp_path):
        with pytest.raises(SchemaError):
            ingest(write(tmp_path, '{"kind": "line", "eps": 1, "points": [[0, 1]], "color": "red"}'))


class TestInfluenceCsv:
    def test_columns_and_values(self, tmp_path):
        p = tmp_path / "i.csv"
        write_influence_csv(p, [0.1, 0.4, 0.2], 0.3, truth_labels=[True, False, True])
        assert p.read_text().splitlines()[0] == "index,alpha,alpha_norm,label_pred,label_true"
        d = read_influence_csv(p)
        np.testing.assert_array_equal(d["index"], [0, 1, 2])
        np.testing.assert_array_equal(d["alpha"], [0.1, 0.4, 0.2])
        np.testing.assert_allclose(d["alpha_norm"], [0.25, 1.0, 0.5])
        np.testing.assert_array_equal(d["label_pred"], [1, 0, 0])
        np.testing.assert_array_equal(d["label_true"], [1, 0, 1])

    def test_without_truth(self, tmp_path):
        p = tmp_path / "i.csv"
        write_influence_csv(p, [0.0, 0.0], 0.3)
        d = read_influence_csv(p)
        assert "label_true" not in d
        np.testing.assert_array_equal(d["label_pred"], [1, 1])

    def test_floats_exact(self, tmp_path):
        a = np.random.default_rng(0).random(7)
        write_influence_csv(tmp_path / "i.csv", a, 0.3)
        np.testing.assert_array_equal(read_influence_csv(tmp_path / "i.csv")["alpha"], a)


class TestReport:
    def test_emit_load(self, tmp_path):
        inst = generate("line", 10, 7, noise_sigma=0.1, outlier_spread=10, seed=2, eps=0.3)
        rep = robust_fit(inst)
        emit_report(rep, tmp_path / "r.json")
        doc = load_report(tmp_path / "r.json")
        assert doc["kind"] == "line" and doc["estimator"]["method"] == "exact"
        assert doc["inlier_mask"] == [int(v) for v in inst.truth_labels]
        assert doc["truth_labels"] == doc["inlier_mask"]
        assert "timing" not in doc

    def test_timing_optional(self):
        rep = robust_fit(generate("line", 6, 5, seed=0))
        assert "timing" in json.loads(dumps_report(rep, include_timing=True))

    def test_schema_rejects(self, tmp_path):
        doc = robust_fit(generate("line", 6, 5, seed=0)).to_dict()
        doc["inlier_mask"][0] = 2
        with pytest.raises(SchemaError) as exc:
            validate_report(doc)
        assert exc.value.field == "inlier_mask[0]"
        del doc["consensus"]
        (tmp_path / "r.json").write_text(json.dumps(doc))
        with pytest.raises(SchemaError):
            load_report(tmp_path / "r.json")


class TestPlotData:
    def test_sorted_pairs_and_stub(self, tmp_path):
        csv_path, gp_path = write_plot_data(tmp_path / "plots", [0.5, 0.1, 1.0, 0.1], 0.3)
        rows = [line.split(",") for line in csv_path.read_text().splitlines()]
        assert rows[0] == ["rank", "alpha_norm", "index"]
        assert [float(r[1]) for r in rows[1:]] == [0.1, 0.1, 0.5, 1.0]
        assert [int(r[2]) for r in rows[1:]] == [1, 3, 0, 2]
        stub = gp_path.read_text()
        assert csv_path.name in stub and "0.3" in stub
