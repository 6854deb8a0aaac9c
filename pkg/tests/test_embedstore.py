import numpy as np
import pytest

from momentprior.embedstore import (
    EmbeddingFormatError,
    EmbeddingTable,
    is_normalized,
    load_table,
    normalize,
    save_table,
    similarity_matrix,
)


def _random_table(rng, n, d):
    rows = rng.standard_normal((n, d)).astype(np.float32).astype(np.float64)
    return EmbeddingTable(tuple(f"w{i}" for i in range(n)), rows)


def test_csv_three_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,1,2\nb,3,4\nc,5,6\n")
    t = load_table(p)
    assert len(t) == 3 and t.dim == 2
    np.testing.assert_array_equal(t.row("b"), [3.0, 4.0])


def test_duplicate_label_named(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("dog,1,2\ncat,3,4\ndog,5,6\n")
    with pytest.raises(EmbeddingFormatError, match="'dog'.*row 2"):
        load_table(p)


def test_ragged_csv_reports_row(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,1,2\nb,3\n")
    with pytest.raises(EmbeddingFormatError, match="row 1"):
        load_table(p)


def test_non_finite_reports_row(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,1,2\nb,3,4\nc,nan,1\n")
    with pytest.raises(EmbeddingFormatError, match="row 2"):
        load_table(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "t.emb"
    p.write_bytes(b"not json\n\x00\x00")
    with pytest.raises(EmbeddingFormatError, match="header"):
        load_table(p)


def test_truncated_payload(tmp_path):
    rng = np.random.default_rng(0)
    p = tmp_path / "t.emb"
    save_table(_random_table(rng, 4, 3), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(EmbeddingFormatError, match="row length mismatch at row 3"):
        load_table(p)


def test_binary_round_trip_100_tables(tmp_path):
    rng = np.random.default_rng(1)
    for k in range(100):
        t = _random_table(rng, int(rng.integers(0, 30)), int(rng.integers(1, 20)))
        p = tmp_path / f"t{k}.emb"
        save_table(t, p)
        back = load_table(p)
        assert back.labels == t.labels
        assert back.rows.tobytes() == t.rows.tobytes()


def test_csv_round_trip_is_exact_for_float64(tmp_path):
    rng = np.random.default_rng(2)
    t = EmbeddingTable(("x", "y,z", 'q"'), rng.standard_normal((3, 5)))
    p = tmp_path / "t.csv"
    save_table(t, p)
    assert load_table(p).equals(t)


def test_empty_table_into_fresh_directory(tmp_path):
    p = tmp_path / "new" / "empty.emb"
    p.parent.mkdir()
    save_table(EmbeddingTable.empty(8), p)
    back = load_table(p)
    assert len(back) == 0 and back.dim == 8


def test_large_table_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    t = _random_table(rng, 10_000, 512)
    p = tmp_path / "big.emb"
    save_table(t, p)
    assert load_table(p).equals(t)


def test_normalize_hand_value():
    t = normalize(EmbeddingTable(("a",), [[3.0, 4.0]]))
    np.testing.assert_allclose(t.rows, [[0.6, 0.8]], atol=1e-15)


def test_normalize_unit_row_unchanged():
    t = EmbeddingTable(("a",), [[0.0, 1.0, 0.0]])
    np.testing.assert_allclose(normalize(t).rows, t.rows, atol=1e-6)


def test_zero_row_names_label():
    with pytest.raises(ValueError, match="'z'"):
        normalize(EmbeddingTable(("a", "z"), [[1.0, 0.0], [0.0, 0.0]]))


def test_similarity_of_orthonormal_rows_is_identity():
    t = EmbeddingTable(("a", "b", "c"), np.eye(3))
    np.testing.assert_array_equal(similarity_matrix(t), np.eye(3))


def test_similarity_matches_pairwise_dot_products():
    rng = np.random.default_rng(4)
    t = normalize(EmbeddingTable(tuple(map(str, range(50))), rng.standard_normal((50, 16))))
    sim = similarity_matrix(t)
    for i in range(50):
        for j in range(50):
            expected = 1.0 if i == j else float(np.dot(t.rows[i], t.rows[j]))
            assert sim[i, j] == pytest.approx(expected, abs=1e-12)
    assert np.array_equal(sim, sim.T)


def test_similarity_rejects_unnormalized():
    with pytest.raises(ValueError, match="normalized"):
        similarity_matrix(EmbeddingTable(("a",), [[2.0, 0.0]]))


def test_table_is_immutable_and_validated():
    t = EmbeddingTable(("a", "b"), [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        t.rows[0, 0] = 5.0
    with pytest.raises(EmbeddingFormatError):
        EmbeddingTable(("a",), [[1.0], [2.0]])
    assert is_normalized(t)
    assert t.select(["b"]).labels == ("b",)
    with pytest.raises(KeyError, match="'q'"):
        t.row("q")
