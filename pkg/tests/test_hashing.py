from sentistream.hashing import FNV64_OFFSET, fnv1a64, fnv1a64_hex


def test_empty_input_is_offset_basis():
    assert fnv1a64(b"") == FNV64_OFFSET == 0xCBF29CE484222325


def test_known_vectors():
    # published FNV-1a 64-bit reference values
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_str_and_bytes_agree():
    assert fnv1a64("hello") == fnv1a64(b"hello")


def test_hex_is_fixed_width():
    h = fnv1a64_hex("x")
    assert len(h) == 16
    assert int(h, 16) == fnv1a64("x")


def test_distinct_inputs_distinct_hashes():
    values = {fnv1a64(f"key-{i}") for i in range(10_000)}
    assert len(values) == 10_000
