import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonavila.embedding_store import (
    EmbeddingRecord,
    EmbeddingSet,
    Kind,
    Label,
    align_text_embeddings,
    decode_embedding_set,
    encode_embedding_set,
    read_embedding_set,
    write_embedding_set,
)
from anonavila.errors import DimensionError, FormatError, IntegrityError, MissingTerm
from anonavila.term_pool import Category, TermPool


def _set(n=2, dim=512, seed=0, kind=Kind.IMAGE_PATCHES):
    rng = np.random.default_rng(seed)
    recs = [EmbeddingRecord(f"p{i}", rng.standard_normal(dim),
                            (i, 2 * i) if kind is Kind.IMAGE_PATCHES else None,
                            Label.NORMAL, "s1" if kind is Kind.IMAGE_PATCHES else None) for i in range(n)]
    return EmbeddingSet(dim, recs, kind)


def test_minimal_file(tmp_path):
    write_embedding_set(_set(), tmp_path / "a.nave")
    s = read_embedding_set(tmp_path / "a.nave")
    assert s.dim == 512 and len(s.records) == 2


def test_nan_rejected():
    v = np.ones(4)
    v[2] = np.nan
    with pytest.raises(IntegrityError, match="bad"):
        EmbeddingSet(4, [EmbeddingRecord("bad", v)])


def test_nan_in_file_rejected():
    data = bytearray(encode_embedding_set(_set(1, dim=4)))
    data[-4:] = struct.pack("<f", float("nan"))
    with pytest.raises(IntegrityError):
        decode_embedding_set(bytes(data))


@pytest.mark.parametrize("vec", [[0.0, 0.0, 0.0], [1.0, np.inf, 0.0]])
def test_zero_norm_and_inf(vec):
    with pytest.raises(IntegrityError):
        EmbeddingSet(3, [EmbeddingRecord("r", vec)])


def test_duplicate_id():
    with pytest.raises(IntegrityError):
        EmbeddingSet(2, [EmbeddingRecord("a", [1, 0]), EmbeddingRecord("a", [0, 1])])


def test_dim_mismatch():
    with pytest.raises(DimensionError):
        EmbeddingSet(3, [EmbeddingRecord("a", [1, 0])])


def test_term_texts_have_no_grid():
    with pytest.raises(IntegrityError):
        EmbeddingSet(2, [EmbeddingRecord("a", [1, 0], grid=(0, 0))], Kind.TERM_TEXTS)


def test_empty_set_file(tmp_path):
    write_embedding_set(EmbeddingSet(512, []), tmp_path / "e.nave")
    data = (tmp_path / "e.nave").read_bytes()
    assert struct.unpack("<Q", data[11:19])[0] == 0
    assert read_embedding_set(tmp_path / "e.nave") == EmbeddingSet(512, [])


def test_unit_basis_encoding():
    e0 = np.zeros(512)
    e0[0] = 1.0
    data = encode_embedding_set(EmbeddingSet(512, [EmbeddingRecord("e0", e0)]))
    payload = np.frombuffer(data[-512 * 4:], dtype="<f4")
    assert payload[0] == 1.0 and not payload[1:].any()
    assert data[:4] == b"NAVE"
    assert struct.unpack("<H", data[4:6])[0] == 1


def test_roundtrip_1000_records(tmp_path):
    s = _set(1000, seed=7)
    write_embedding_set(s, tmp_path / "big.nave")
    again = read_embedding_set(tmp_path / "big.nave")
    assert again == s
    assert encode_embedding_set(again) == encode_embedding_set(s)
    assert again.vectors.tobytes() == s.vectors.tobytes()


@pytest.mark.parametrize("mutate", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:4] + struct.pack("<H", 2) + d[6:],
    lambda d: d[:-1],
    lambda d: d + b"\x00",
    lambda d: d[:11] + struct.pack("<Q", 3) + d[19:],
    lambda d: d[:11] + struct.pack("<Q", 1) + d[19:],
])
def test_corrupt_files(mutate):
    data = encode_embedding_set(_set(2, dim=8))
    with pytest.raises(FormatError):
        decode_embedding_set(mutate(data))


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        read_embedding_set(tmp_path / "nope.nave")


def test_align_reorders():
    pool = TermPool(Category.NORMAL, ("a", "b"))
    s = EmbeddingSet(2, [EmbeddingRecord("b", [0, 2]), EmbeddingRecord("a", [1, 0])], Kind.TERM_TEXTS)
    np.testing.assert_array_equal(align_text_embeddings(pool, s), [[1, 0], [0, 2]])


def test_align_missing():
    pool = TermPool(Category.NORMAL, ("a", "b"))
    s = EmbeddingSet(2, [EmbeddingRecord("a", [1, 0])], Kind.TERM_TEXTS)
    with pytest.raises(MissingTerm, match="'b'"):
        align_text_embeddings(pool, s)


def test_align_extra_warns():
    pool = TermPool(Category.NORMAL, ("a",))
    s = EmbeddingSet(2, [EmbeddingRecord("a", [1, 0]), EmbeddingRecord("z", [0, 1])], Kind.TERM_TEXTS)
    with pytest.warns(UserWarning):
        out = align_text_embeddings(pool, s)
    assert out.shape == (1, 2)


def test_align_92_terms():
    terms = tuple(f"t{i}" for i in range(92))
    rng = np.random.default_rng(3)
    vecs = rng.standard_normal((92, 16))
    order = rng.permutation(92)
    s = EmbeddingSet(16, [EmbeddingRecord(terms[i], vecs[i]) for i in order], Kind.TERM_TEXTS)
    out = align_text_embeddings(TermPool(Category.NORMAL, terms), s)
    np.testing.assert_array_equal(out, vecs.astype(np.float32))


finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32).filter(lambda x: x != 0)
record = st.builds(
    lambda vec, grid, label, slide: (vec, grid, label, slide),
    st.lists(finite32, min_size=3, max_size=3),
    st.none() | st.tuples(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1)),
    st.sampled_from(list(Label)),
    st.none() | st.text(min_size=1, max_size=8),
)


@settings(max_examples=50)
@given(st.lists(record, max_size=12))
def test_roundtrip_property(items):
    s = EmbeddingSet(3, [EmbeddingRecord(f"id{i}", *it) for i, it in enumerate(items)])
    again = decode_embedding_set(encode_embedding_set(s))
    assert again == s
