"""Exporter tests, including the cross-component round-trip acceptance check.

The consumer side is exercised through the nutripipe package's public
vector-store loader — the EMBV1 file is the only interface between the two.
"""

import numpy as np
import pytest

from embed_export.cli import main as cli_main
from embed_export.errors import DuplicateKey, EmptyInput, MalformedLine, ModelLoadFailure
from embed_export.exporter import ExportJob, export_embeddings, read_input_tsv
from embed_export.models import HashedTrigramModel, load_model

nutripipe_embeddings = pytest.importorskip(
    "nutripipe.embeddings", reason="round-trip checks need the consumer package"
)


def write_tsv(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for key, text in pairs:
            fh.write(f"{key}\t{text}\n")
    return path


@pytest.fixture
def job_factory(tmp_path):
    def build(pairs, **kwargs):
        tsv = write_tsv(tmp_path / "input.tsv", pairs)
        kwargs.setdefault("model_id", "fallback:256")
        return ExportJob(input_path=str(tsv), output_path=str(tmp_path / "out.embv1"), **kwargs)

    return build


class TestInput:
    def test_duplicate_key_rejected(self, job_factory):
        with pytest.raises(DuplicateKey):
            export_embeddings(job_factory([("a", "pizza"), ("a", "soup")]))

    def test_empty_input_rejected(self, job_factory):
        with pytest.raises(EmptyInput):
            export_embeddings(job_factory([]))

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("no-tab-here\n")
        with pytest.raises(MalformedLine):
            read_input_tsv(path)

    def test_text_may_contain_tabs(self, tmp_path):
        path = write_tsv(tmp_path / "t.tsv", [("k", "text\twith\ttabs")])
        assert read_input_tsv(path) == [("k", "text\twith\ttabs")]


class TestModels:
    def test_unknown_checkpoint_is_model_load_failure(self):
        with pytest.raises(ModelLoadFailure):
            load_model("definitely/not-a-real-checkpoint-xyz")

    def test_bad_fallback_ids(self):
        with pytest.raises(ModelLoadFailure):
            load_model("fallback:nope")
        with pytest.raises(ModelLoadFailure):
            load_model("fallback:8")

    def test_fallback_model_matches_consumer_recipe(self):
        model = HashedTrigramModel(256)
        for text in ["pizza", "Grilled Cheese", "crème brûlée", ""]:
            mine = model.encode([text])[0]
            theirs = nutripipe_embeddings.embed_fallback(text, 256)
            assert mine.tobytes() == theirs.tobytes()

    @pytest.mark.skipif(True, reason="needs a downloaded sentence-transformers checkpoint")
    def test_pretrained_model_dim(self):
        model = load_model("sentence-transformers/all-MiniLM-L6-v2")
        assert model.dim == 384


class TestExport:
    def test_count_includes_metadata_entry(self, job_factory):
        summary = export_embeddings(job_factory([("a", "pizza"), ("b", "soup"), ("c", "stew")]))
        assert summary.count == 4  # 3 records + __model__ entry
        assert summary.dim == 256

    def test_vectors_are_unit_norm_when_normalizing(self, job_factory):
        job = job_factory([("a", "pizza margherita"), ("b", "beef stew")])
        export_embeddings(job)
        store = nutripipe_embeddings.load_vector_store(job.output_path)
        for key in ("a", "b"):
            norm = float(np.linalg.norm(store.entries[key].astype(np.float64)))
            assert abs(norm - 1.0) < 1e-3

    def test_model_recorded_in_store(self, job_factory):
        job = job_factory([("a", "pizza")])
        export_embeddings(job)
        store = nutripipe_embeddings.load_vector_store(job.output_path)
        assert store.model_id() == "fallback:256"

    def test_export_is_deterministic(self, job_factory, tmp_path):
        pairs = [(f"k{i}", f"dish number {i}") for i in range(50)]
        job1 = job_factory(pairs)
        export_embeddings(job1)
        blob1 = open(job1.output_path, "rb").read()
        job2 = ExportJob(input_path=job1.input_path, output_path=str(tmp_path / "again.embv1"),
                         model_id="fallback:256", batch_size=7)
        export_embeddings(job2)
        assert open(job2.output_path, "rb").read() == blob1


def test_acceptance_11_round_trip(job_factory):
    """Criterion 11: consumer loads exporter output; bit-exact; self-cosine 1."""
    pairs = [(f"key-{i:04d}", f"synthetic dish {i} with words {i % 17}") for i in range(999)]
    pairs.append(("pizza", "pizza"))
    job = job_factory(pairs)
    summary = export_embeddings(job)
    assert summary.count == 1001

    store = nutripipe_embeddings.load_vector_store(job.output_path)
    assert store.dim == 256 and store.count == 1001

    model = HashedTrigramModel(256)
    checked = 0
    for key, text in pairs:
        expected = model.encode([text])[0]
        norm = float(np.linalg.norm(expected.astype(np.float64)))
        if norm > 0.0:
            expected = (expected.astype(np.float64) / norm).astype(np.float32)
        assert store.entries[key].tobytes() == expected.tobytes()
        checked += 1
    assert checked == 1000

    self_sim = nutripipe_embeddings.cosine(
        store.entries["pizza"], nutripipe_embeddings.embed_fallback("pizza", 256)
    )
    assert abs(self_sim - 1.0) < 1e-6
    print("ACCEPTANCE 11 PASS: 1,000 vectors round-trip bit-exact; self-cosine 1.0")


def test_cli_export(tmp_path, capsys):
    tsv = write_tsv(tmp_path / "in.tsv", [("a", "pizza"), ("b", "soup")])
    code = cli_main(["export", "--input", str(tsv), "--out", str(tmp_path / "v.embv1"),
                     "--model", "fallback:64", "--batch", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert '"count": 3' in out and '"dim": 64' in out


def test_cli_model_failure_exit_code(tmp_path):
    tsv = write_tsv(tmp_path / "in.tsv", [("a", "pizza")])
    code = cli_main(["export", "--input", str(tsv), "--out", str(tmp_path / "v.embv1"),
                     "--model", "no/such-model"])
    assert code == 2
