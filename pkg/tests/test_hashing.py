from __future__ import annotations

from hypothesis import given, strategies as st

from skillevo.hashing import digest_hex, digest_text, fnv1a_64, hash_unit


def reference_fnv1a_64(data: bytes) -> int:
    # textbook definition, written independently of the package
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def test_known_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_empty_input_unit_value():
    assert abs(hash_unit(b"") - 0xCBF29CE484222325 / 2**64) < 1e-15
    assert 0.79 < hash_unit(b"") < 0.80


@given(st.binary(max_size=200))
def test_matches_reference(data):
    assert fnv1a_64(data) == reference_fnv1a_64(data)


@given(st.binary(max_size=200))
def test_unit_interval(data):
    u = hash_unit(data)
    assert 0.0 <= u < 1.0


def test_digest_format():
    assert digest_hex(b"a") == "af63dc4c8601ec8c"
    assert digest_text("foobar") == "85944171f73967e8"
    assert len(digest_text("x" * 1000)) == 16
