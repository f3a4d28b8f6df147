"""Acceptance gate for the exporter package.

The contract under test is interoperability: files produced here must be
accepted by the consuming harness's own reader, with cell order preserved,
declared dims enforced, and chunking invisible in the output bytes. The
stub embedder stands in for real checkpoints, so the gate runs anywhere.
"""

import numpy as np
import pytest

from cellrx.data import SyntheticSpec, synthesize_dataset, write_dataset
from cellrx.embeddings import read_embeddings

from cellrx_exporters import (
    DimMismatchError,
    ExporterSpec,
    StubEmbedder,
    export_embeddings,
)


@pytest.fixture()
def matrix_path(tmp_path):
    dataset = synthesize_dataset(SyntheticSpec(100, 20, "linear", seed=0))
    path = tmp_path / "cells.csv"
    write_dataset(dataset, path, tmp_path / "cells.manifest.json")
    return path


def test_exporter_schema_against_consumer_reader(tmp_path, matrix_path):
    out = tmp_path / "scFoundation__frozen.emb"
    spec = ExporterSpec("scFoundation", str(matrix_path), str(out))
    export_embeddings(spec, embedder=StubEmbedder(3072))

    # the consumer's reader accepts the file as written
    loaded = read_embeddings(out)
    assert (loaded.model_id, loaded.strategy, loaded.pooling) == \
        ("scFoundation", "frozen", "concat4")
    assert loaded.data.shape == (100, 3072)
    assert loaded.data.dtype == np.float32

    # cell order equals dataset order, row for row
    assert loaded.cell_ids == [f"cell{i:02d}" for i in range(100)]
    expected = StubEmbedder(3072).embed_batch(loaded.cell_ids, [{}] * 100)
    assert np.array_equal(loaded.data, expected)

    # declared dim is enforced before anything is written
    bad = tmp_path / "never.emb"
    with pytest.raises(DimMismatchError):
        export_embeddings(ExporterSpec("scFoundation", str(matrix_path), str(bad)),
                          embedder=StubEmbedder(64))
    assert not bad.exists()

    # chunked and unchunked exports are byte-identical
    chunked = tmp_path / "chunked.emb"
    export_embeddings(
        ExporterSpec("scFoundation", str(matrix_path), str(chunked), chunk_size=50),
        embedder=StubEmbedder(3072),
    )
    assert chunked.read_bytes() == out.read_bytes()
