import pytest

from multav.config import REQUIRED, ConfigError, KVReader, dump_kv, fmt, parse_kv


def test_parse_basic():
    text = "# header\na = 1\nmask.kind = roa  # trailing\n\nname = x = y\n"
    assert parse_kv(text) == {"a": "1", "mask.kind": "roa", "name": "x = y"}


@pytest.mark.parametrize("text,match", [("novalue\n", "expected"), ("= 3\n", "empty key"),
                                        ("a = 1\na = 2\n", "duplicate")])
def test_parse_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_kv(text)


def test_fmt_round_trips_through_reader():
    items = parse_kv(dump_kv({"f": fmt(0.1 + 0.2), "b": fmt(True), "l": fmt((3, 4)), "i": fmt(7)}))
    r = KVReader(items)
    assert r.get_float("f") == 0.1 + 0.2
    assert r.get_bool("b") is True
    assert r.get_int_list("l") == [3, 4]
    assert r.get_int("i") == 7
    r.finish()


def test_reader_required_and_unknown():
    r = KVReader({"a": "1", "typo": "2"}, where="t")
    with pytest.raises(ConfigError, match="missing required key 'b'"):
        r.get_int("b", REQUIRED)
    assert r.get_int("a") == 1
    with pytest.raises(ConfigError, match="unknown key.*typo"):
        r.finish()


def test_reader_type_errors():
    r = KVReader({"a": "x", "b": "maybe"})
    with pytest.raises(ConfigError, match="number"):
        r.get_float("a")
    with pytest.raises(ConfigError, match="boolean"):
        r.get_bool("b")


def test_sub_reader_takes_prefix():
    r = KVReader({"attack.mask.k": "3", "attack.steps": "2", "epochs": "1"})
    a = r.sub("attack.")
    m = a.sub("mask.")
    assert m.get_int("k") == 3 and a.get_int("steps") == 2
    assert r.remaining() == {"epochs": "1"}
