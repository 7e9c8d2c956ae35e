import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialfuse.embedding import (ELIG_DIM, EMBED_DIM, CacheBackedEncoder,
                                 DimMismatch, EmbeddingCache, MissingEmbedding,
                                 StubEncoder, check_cache_file,
                                 eligibility_vector, embed_eligibility,
                                 enforce_global_cap, mean_pool, project,
                                 split_eligibility, stub_encode,
                                 truncate_tokens)

TABLE_V_CRITERIA = (
    "Inclusion Criteria: * Male and female patients between 18 and 75 years "
    "of age, * Patients having confirmed IBS according to Rome IV criteria "
    "(newly and previously non-responder to treatment), * Pain/discomfort "
    "score >1 and <6 on 0-7 scale in the 7 days preceding inclusion, * Not "
    "hypersensitive to any ingredient.\n"
    "Exclusion Criteria: * Organic intestinal disease (Crohn's, ulcerative "
    "colitis), * Pregnancy, * Treatments likely to influence IBS "
    "(antidepressants, opioids, narcotic analgesics), * Chronic alcoholism, "
    "vegetarian or vegan regimens, * Eating disorders (anorexia/bulimia), "
    "* Documented food allergies."
)


def test_stub_encode_deterministic_and_normalized():
    a = stub_encode("protocol", "some text")
    b = stub_encode("protocol", "some text")
    assert np.array_equal(a, b)
    assert a.shape == (EMBED_DIM,)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-6


def test_stub_encode_modality_matters():
    assert not np.array_equal(stub_encode("proto", "a"), stub_encode("onto", "a"))


def test_split_eligibility_table_v_counts():
    incl, excl = split_eligibility(TABLE_V_CRITERIA)
    assert len(incl) == 4
    assert len(excl) == 6


def test_split_eligibility_empty_and_header_only():
    assert split_eligibility("") == ([], [])
    incl, excl = split_eligibility("Exclusion Criteria:\nNo pregnant women.\nNo smokers.")
    assert incl == []
    assert len(excl) == 2


def test_split_eligibility_default_inclusion():
    incl, excl = split_eligibility("Adults aged 18 or older.")
    assert len(incl) == 1 and excl == []


def test_mean_pool_conventions():
    assert np.array_equal(mean_pool([], dim=4), np.zeros(4))
    v = np.ones(4)
    assert np.array_equal(mean_pool([v, v]), v)


def test_eligibility_vector_singleton_and_empty_group():
    enc = StubEncoder()
    vec = eligibility_vector("Adults are eligible for inclusion.", enc)
    assert vec.shape == (ELIG_DIM,)
    assert np.allclose(vec[EMBED_DIM:], 0.0)  # no exclusion sentences
    assert not np.allclose(vec[:EMBED_DIM], 0.0)


def test_embed_eligibility_identity_block():
    enc = StubEncoder()
    P = np.hstack([np.eye(EMBED_DIM), np.zeros((EMBED_DIM, EMBED_DIM))])
    text = "Adults are eligible for inclusion."
    z = embed_eligibility(text, enc, P)
    incl, _ = split_eligibility(text)
    expected = mean_pool([enc.encode("criteria.inclusion", s) for s in incl])
    assert np.allclose(z, expected)


def test_project_against_triple_loop_oracle():
    rng = np.random.Generator(np.random.PCG64(0))
    P = rng.standard_normal((5, 7))
    e = rng.standard_normal(7)
    z = project(e, P)
    oracle = np.array([sum(P[r, c] * e[c] for c in range(7)) for r in range(5)])
    assert np.allclose(z, oracle, atol=1e-9)
    assert np.allclose(project(e, np.zeros((7, 7))), 0.0)


def test_project_dim_mismatch():
    with pytest.raises(DimMismatch):
        project(np.zeros(5), np.zeros((4, 6)))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_project_linearity(a, b, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    P = rng.standard_normal((6, 6))
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    lhs = project(a * x + b * y, P)
    rhs = a * project(x, P) + b * project(y, P)
    assert np.allclose(lhs, rhs, rtol=1e-5, atol=1e-8)


def test_truncate_protocol_sentence_boundary():
    text = " ".join(f"Sentence number {i} has exactly six tokens." for i in range(100))
    out = truncate_tokens("protocol", text)
    assert len(out.split()) <= 512
    assert out.endswith(".")


def test_truncate_priority_keywords_kept():
    filler = " ".join(f"Filler sentence number {i} adds tokens here." for i in range(90))
    text = filler + " The primary endpoint is overall survival."
    out = truncate_tokens("protocol", text)
    assert "primary endpoint" in out


def test_truncate_short_input_unchanged():
    assert truncate_tokens("molecular", "CCO CCN") == "CCO CCN"


def test_global_cap():
    sentences = " ".join(f"Criteria sentence number {i} six tokens." for i in range(100))
    segments = [("protocol", sentences),
                ("protocol", sentences),
                ("molecular", " ".join(["tok"] * 200)),
                ("ontology", " ".join(["term"] * 300))]
    capped = enforce_global_cap(segments)
    total = sum(len(t.split()) for _, t in capped)
    assert total == 1024
    # per-modality caps applied first
    assert 0 < len(capped[0][1].split()) <= 512
    assert len(capped[2][1].split()) <= 128
    # trimming proceeds from the back, so ontology loses everything first
    assert len(capped[3][1].split()) == 0


def test_cache_roundtrip_bitexact(tmp_path):
    path = tmp_path / "cache.bin"
    cache = EmbeddingCache(path, dim=EMBED_DIM)
    vec = stub_encode("protocol", "hello")
    cache.put("protocol", "hello", vec)
    cache.save()
    reloaded = EmbeddingCache(path)
    out = reloaded.get("protocol", "hello")
    assert out.dtype == np.float32
    assert np.array_equal(out, vec.astype(np.float32))
    assert reloaded.get("protocol", "absent") is None


def test_cache_dim_mismatch(tmp_path):
    cache = EmbeddingCache(tmp_path / "c.bin", dim=768)
    with pytest.raises(DimMismatch):
        cache.put("protocol", "x", np.zeros(512, dtype=np.float32))


def test_cache_format_checker(tmp_path):
    path = tmp_path / "cache.bin"
    cache = EmbeddingCache(path, dim=768)
    cache.put("protocol", "x", stub_encode("protocol", "x"))
    cache.save()
    info = check_cache_file(path)
    assert info == {"dim": 768, "count": 1}
    path.write_bytes(b"WRONGMAG" + path.read_bytes()[8:])
    with pytest.raises(IOError):
        check_cache_file(path)


def test_cache_backed_encoder(tmp_path):
    cache = EmbeddingCache(tmp_path / "c.bin", dim=768)
    vec = stub_encode("protocol", "known")
    cache.put("protocol", "known", vec)
    enc = CacheBackedEncoder(cache)
    assert np.allclose(enc.encode("protocol", "known"), vec)
    with pytest.raises(MissingEmbedding):
        enc.encode("protocol", "unknown text")
