"""Dataset model, file formats, labels, grouping, and the synthesizer."""

import numpy as np
import pytest

from cellrx.data import (
    BALANCE_BAND,
    CellProfile,
    Dataset,
    DatasetManifest,
    GeneVocabulary,
    SampleResponse,
    SampleResponseTable,
    SyntheticSpec,
    assign_labels,
    group_by_category,
    load_dataset,
    load_manifest,
    load_response_table,
    synthesize_dataset,
    synthesize_studies,
    write_dataset,
    write_manifest,
    write_response_table,
)
from cellrx.errors import (
    ConsistencyError,
    DataError,
    FormatError,
    ParameterError,
)


def _manifest(n_cells, **over):
    base = dict(study_id="s1", tissue="cell line", cancer_type="AML",
                therapy_type="targeted", regimen="r0", n_cells=n_cells,
                collection="primary")
    base.update(over)
    return DatasetManifest(**base)


def _tiny_dataset(labels=(1, 0)):
    vocab = GeneVocabulary(["GA", "GB", "GC", "GD"])
    cells = [
        CellProfile("c0", "sampleA", {0: 2.0, 2: 1.5}, labels[0]),
        CellProfile("c1", "sampleB", {1: 0.25}, labels[1]),
    ]
    return Dataset(_manifest(2), vocab, cells)


# ------------------------------------------------------------------ model


def test_profile_drops_zeros_and_validates():
    p = CellProfile("c", "s", {3: 0.0, 1: 2.0})
    assert p.expression == {1: 2.0}
    with pytest.raises(DataError):
        CellProfile("c", "s", {0: -1.0})
    with pytest.raises(DataError):
        CellProfile("c", "s", {0: float("nan")})
    with pytest.raises(DataError):
        CellProfile("c", "s", {0: 1.0}, label=2)


def test_vocabulary_contract():
    vocab = GeneVocabulary(["A", "B"])
    assert len(vocab) == 2 and "A" in vocab and vocab.index_of("B") == 1
    with pytest.raises(DataError):
        GeneVocabulary(["A", "A"])
    with pytest.raises(DataError):
        vocab.index_of("Z")
    with pytest.raises(ParameterError):
        GeneVocabulary([])


def test_dataset_consistency_checks():
    vocab = GeneVocabulary(["A", "B"])
    cells = [CellProfile("c0", "s", {0: 1.0})]
    with pytest.raises(ConsistencyError):
        Dataset(_manifest(2), vocab, cells)
    dup = [CellProfile("c0", "s", {0: 1.0}), CellProfile("c0", "s", {1: 1.0})]
    with pytest.raises(ConsistencyError):
        Dataset(_manifest(2), vocab, dup)
    out_of_range = [CellProfile("c0", "s", {5: 1.0})]
    with pytest.raises(ConsistencyError):
        Dataset(_manifest(1), vocab, out_of_range)


def test_labels_array_reports_missing():
    vocab = GeneVocabulary(["A", "B", "C", "D"])
    cells = [CellProfile("c0", "s", {0: 1.0}, 1), CellProfile("c1", "s", {1: 1.0})]
    ds = Dataset(_manifest(2), vocab, cells)
    with pytest.raises(DataError, match="'c1'"):
        ds.labels_array()
    assert _tiny_dataset().labels_array().tolist() == [1, 0]


def test_to_dense():
    dense = _tiny_dataset().to_dense()
    assert dense.shape == (2, 4)
    assert dense[0].tolist() == [2.0, 0.0, 1.5, 0.0]
    assert dense[1].tolist() == [0.0, 0.25, 0.0, 0.0]


def test_manifest_validation():
    with pytest.raises(DataError):
        _manifest(2, tissue="")
    with pytest.raises(DataError):
        _manifest(2, collection="exotic")
    with pytest.raises(DataError):
        _manifest(-1)


# ------------------------------------------------------------------ labels


def test_response_table_maps_status_not_timepoint():
    table = SampleResponseTable({
        "sampleA": SampleResponse("responsive", "pre"),
        "sampleB": SampleResponse("nonresponsive", "post"),
        "sampleC": SampleResponse("responsive", "post"),
    })
    assert table.label_for("sampleA") == 1
    assert table.label_for("sampleB") == 0
    assert table.label_for("sampleC") == 1
    with pytest.raises(DataError):
        table.label_for("missing")
    with pytest.raises(DataError):
        SampleResponse("cured", "pre")
    with pytest.raises(DataError):
        SampleResponse("responsive", "midway")


def test_assign_labels_by_sample():
    ds = _tiny_dataset(labels=(None, None))
    table = SampleResponseTable({
        "sampleA": SampleResponse("nonresponsive", "pre"),
        "sampleB": SampleResponse("responsive", "pre"),
    })
    cells = assign_labels(ds.cells, table)
    assert [c.label for c in cells] == [0, 1]
    assert [c.label for c in ds.cells] == [None, None]  # originals untouched


def test_response_table_round_trip(tmp_path):
    path = tmp_path / "responses.csv"
    table = SampleResponseTable({
        "b": SampleResponse("responsive", "post"),
        "a": SampleResponse("nonresponsive", "pre"),
    })
    write_response_table(table, path)
    loaded = load_response_table(path)
    assert loaded.responses == table.responses
    assert path.read_text().splitlines()[0] == "sample_id,status,timepoint"


def test_response_table_errors(tmp_path):
    bad_header = tmp_path / "h.csv"
    bad_header.write_text("sample,status,timepoint\na,responsive,pre\n")
    with pytest.raises(FormatError, match="header"):
        load_response_table(bad_header)
    dup = tmp_path / "d.csv"
    dup.write_text(
        "sample_id,status,timepoint\na,responsive,pre\na,responsive,post\n"
    )
    with pytest.raises(FormatError, match="duplicate"):
        load_response_table(dup)


# ------------------------------------------------------------------ file I/O


@pytest.mark.parametrize("ext", [".csv", ".sparse"])
def test_dataset_round_trip(tmp_path, ext):
    ds = _tiny_dataset()
    matrix = tmp_path / f"study{ext}"
    manifest = tmp_path / "study.manifest.json"
    write_dataset(ds, matrix, manifest)
    back = load_dataset(matrix, manifest)
    assert back.manifest == ds.manifest
    assert back.vocabulary == ds.vocabulary
    assert back.cell_ids == ds.cell_ids
    for a, b in zip(back.cells, ds.cells):
        assert a.sample_id == b.sample_id
        assert a.label == b.label
        assert a.expression == b.expression  # repr round trip is bit-exact


def test_unlabeled_round_trip_writes_no_sidecar(tmp_path):
    ds = _tiny_dataset(labels=(None, None))
    matrix = tmp_path / "u.csv"
    write_dataset(ds, matrix, tmp_path / "u.manifest.json")
    assert not (tmp_path / "u.labels.csv").exists()
    back = load_dataset(matrix, tmp_path / "u.manifest.json")
    assert all(c.label is None for c in back.cells)


def test_partial_labels_refused(tmp_path):
    ds = _tiny_dataset(labels=(1, None))
    with pytest.raises(ConsistencyError, match="partially labeled"):
        write_dataset(ds, tmp_path / "p.csv", tmp_path / "p.manifest.json")


def test_label_sidecar_must_cover_all_cells(tmp_path):
    ds = _tiny_dataset()
    matrix = tmp_path / "c.csv"
    write_dataset(ds, matrix, tmp_path / "c.manifest.json")
    (tmp_path / "c.labels.csv").write_text("cell_id,label\nc0,1\n")
    with pytest.raises(ConsistencyError, match="c1"):
        load_dataset(matrix, tmp_path / "c.manifest.json")


def test_dense_format_errors(tmp_path):
    manifest = tmp_path / "m.manifest.json"
    write_manifest(_manifest(1), manifest)
    bad_header = tmp_path / "bad.csv"
    bad_header.write_text("id,sample_id,GA\nc0,s,1.0\n")
    with pytest.raises(FormatError, match="header"):
        load_dataset(bad_header, manifest)
    bad_value = tmp_path / "val.csv"
    bad_value.write_text("cell_id,sample_id,GA\nc0,s,abc\n")
    with pytest.raises(FormatError, match="non-numeric"):
        load_dataset(bad_value, manifest)
    ragged = tmp_path / "rag.csv"
    ragged.write_text("cell_id,sample_id,GA\nc0,s\n")
    with pytest.raises(FormatError, match="expected 3 fields"):
        load_dataset(ragged, manifest)


def test_sparse_format_errors(tmp_path):
    manifest = tmp_path / "m.manifest.json"
    write_manifest(_manifest(1), manifest)
    orphan = tmp_path / "o.sparse"
    orphan.write_text("#SPARSE 1 2\n0 0 1.0\n")
    with pytest.raises(FormatError, match="sidecar"):
        load_dataset(orphan, manifest)

    ds = _tiny_dataset()
    matrix = tmp_path / "t.sparse"
    write_dataset(ds, matrix, tmp_path / "t.manifest.json")
    lines = matrix.read_text().splitlines()
    lines.append("9 0 1.0")  # row index out of range
    matrix.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="out of range"):
        load_dataset(matrix, tmp_path / "t.manifest.json")


def test_manifest_file_errors(tmp_path):
    path = tmp_path / "m.json"
    path.write_text("{not json")
    with pytest.raises(FormatError, match="JSON"):
        load_manifest(path)
    path.write_text('{"study_id": "s"}')
    with pytest.raises(FormatError, match="missing keys"):
        load_manifest(path)
    write_manifest(_manifest(2), path)
    raw = path.read_text().replace('"study_id"', '"study_idx"')
    path.write_text(raw)
    with pytest.raises(FormatError):
        load_manifest(path)


# ------------------------------------------------------------------ grouping


def test_group_by_category():
    studies = synthesize_studies(4, 20, 12)
    groups = group_by_category(studies, "tissue")
    assert [g.value for g in groups] == sorted(g.value for g in groups)
    assert sum(len(g.datasets) for g in groups) == 4
    for g in groups:
        assert all(ds.manifest.tissue == g.value for ds in g.datasets)
    by_regimen = group_by_category(studies, "regimen")
    assert [g.value for g in by_regimen] == ["regimen-0", "regimen-1"]
    with pytest.raises(ParameterError):
        group_by_category(studies, "year")


# ------------------------------------------------------------------ synthesis


def test_spec_validation():
    with pytest.raises(ParameterError):
        SyntheticSpec(1, 10)
    with pytest.raises(ParameterError):
        SyntheticSpec(10, 3)
    with pytest.raises(ParameterError):
        SyntheticSpec(10, 10, label_rule="quadratic")
    with pytest.raises(ParameterError):
        SyntheticSpec(10, 10, noise_level=0.5)


def test_synthesis_is_deterministic():
    a = synthesize_dataset(SyntheticSpec(40, 20, seed=5))
    b = synthesize_dataset(SyntheticSpec(40, 20, seed=5))
    assert a.cell_ids == b.cell_ids
    assert all(x.expression == y.expression for x, y in zip(a.cells, b.cells))
    assert a.labels_array().tolist() == b.labels_array().tolist()
    c = synthesize_dataset(SyntheticSpec(40, 20, seed=6))
    assert any(x.expression != y.expression for x, y in zip(a.cells, c.cells))


@pytest.mark.parametrize("rule", ["linear", "interaction"])
def test_labels_stay_in_balance_band(rule):
    for seed in range(3):
        ds = synthesize_dataset(SyntheticSpec(200, 30, rule, seed=seed))
        frac = ds.labels_array().mean()
        assert BALANCE_BAND[0] <= frac <= BALANCE_BAND[1]


def test_every_cell_has_expression():
    # the rank tokenizer cannot represent an all-zero cell
    for seed in range(5):
        ds = synthesize_dataset(SyntheticSpec(300, 40, "linear", seed=seed))
        assert all(c.expression for c in ds.cells)


def test_interaction_rule_structure():
    ds = synthesize_dataset(SyntheticSpec(150, 25, "interaction", seed=1))
    dense = ds.to_dense()
    labels = ds.labels_array()
    # the two pairs always dominate the ranking
    top4 = np.argsort(-dense, axis=1)[:, :4]
    assert all(set(row) == {0, 1, 2, 3} for row in top4.tolist())
    # label is the parity of the two within-pair orders
    u = dense[:, 0] > dense[:, 1]
    v = dense[:, 2] > dense[:, 3]
    assert np.array_equal(labels, (u ^ v).astype(np.int64))


def test_interaction_marginals_carry_no_linear_signal():
    ds = synthesize_dataset(SyntheticSpec(400, 20, "interaction", seed=2))
    dense = ds.to_dense()
    labels = ds.labels_array()
    # per-gene class means stay close for the pair genes: the signal is
    # purely in the within-pair order, invisible to marginal statistics
    for g in range(4):
        gap = abs(dense[labels == 1, g].mean() - dense[labels == 0, g].mean())
        assert gap < 0.1


def test_noise_level_flips_labels():
    clean = synthesize_dataset(SyntheticSpec(500, 20, seed=3))
    noisy = synthesize_dataset(SyntheticSpec(500, 20, seed=3, noise_level=0.2))
    flipped = np.mean(clean.labels_array() != noisy.labels_array())
    assert 0.1 < flipped < 0.3


def test_synthesize_studies_varies_categories():
    studies = synthesize_studies(3, 30, 16, base_seed=4)
    assert [ds.manifest.study_id for ds in studies] == [
        "study-004", "study-005", "study-006",
    ]
    assert len({ds.manifest.tissue for ds in studies}) == 3
    assert all(studies[0].vocabulary == ds.vocabulary for ds in studies)
