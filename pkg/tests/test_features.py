import numpy as np
import pytest
from sklearn.base import clone

from vmfgeo.features import (EmbeddingFormatError, FeaturizerConfig, HashedNgramVectorizer,
                             featurize, fnv1a_64, load_embeddings, write_embeddings)


@pytest.mark.parametrize("data, expected", [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
])
def test_fnv1a_reference_vectors(data, expected):
    assert fnv1a_64(data) == expected


def test_deterministic_and_unit_norm():
    a = featurize("Springfield, Illinois")
    np.testing.assert_array_equal(a, featurize("Springfield, Illinois"))
    assert np.linalg.norm(a) == pytest.approx(1, abs=1e-9)


def test_empty_and_short_text():
    assert not featurize("").any()
    assert not featurize("ab").any()


def test_near_duplicate_similarity_regression():
    a = featurize("Cape Girardeau, Missouri")
    b = featurize("Cape Girardeau Missouri")
    cos = float(a @ b)
    assert cos > 0.8
    assert cos == pytest.approx(0.8295150620062529, abs=1e-12)


def test_normalization_options():
    assert np.array_equal(featurize("PARIS"), featurize("paris"))
    cased = FeaturizerConfig(lowercase=False)
    assert not np.array_equal(featurize("PARIS", cased), featurize("paris", cased))
    # NFC: a precomposed and a decomposed e-acute hash the same
    assert np.array_equal(featurize("caf\u00e9 de flore"), featurize("cafe\u0301 de flore"))


def test_hash_seed_changes_buckets():
    a = featurize("Montevideo", FeaturizerConfig(hash_seed=0))
    b = featurize("Montevideo", FeaturizerConfig(hash_seed=12345))
    assert not np.array_equal(a, b)


def test_config_validation():
    with pytest.raises(ValueError):
        FeaturizerConfig(dim=1000)
    with pytest.raises(ValueError):
        FeaturizerConfig(ngram_min=4, ngram_max=3)


def test_vectorizer_is_sklearn_transformer():
    v = HashedNgramVectorizer(dim=256)
    X = v.fit_transform(["Lima, Peru", "Quito"])
    assert X.shape == (2, 256)
    np.testing.assert_array_equal(X[0], featurize("Lima, Peru", FeaturizerConfig(dim=256)))
    assert clone(v).get_params() == v.get_params()
    with pytest.raises(TypeError):
        v.transform("a single string")


def test_embeddings_round_trip(tmp_path):
    emb = {f"id{i}": np.arange(8, dtype=float) * (i + 1) / 7 for i in range(3)}
    p = tmp_path / "emb.tsv"
    write_embeddings(p, emb)
    back = load_embeddings(p)
    assert len(back) == 3
    for k in emb:
        np.testing.assert_array_equal(back[k], emb[k])


def test_embeddings_short_row(tmp_path):
    p = tmp_path / "emb.tsv"
    p.write_text("id\tdim=8\n" + "a\t" + "\t".join(["0.1"] * 8) + "\n" + "b\t" + "\t".join(["0.1"] * 7) + "\n")
    with pytest.raises(EmbeddingFormatError, match=":3:"):
        load_embeddings(p)


def test_embeddings_duplicate_id(tmp_path):
    p = tmp_path / "emb.tsv"
    row = "\t".join(["1"] * 2)
    p.write_text(f"id\tdim=2\ndup\t{row}\ndup\t{row}\n")
    with pytest.raises(EmbeddingFormatError, match="'dup'"):
        load_embeddings(p)
