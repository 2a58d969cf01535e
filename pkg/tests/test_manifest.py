import pytest

from typoscan.manifest import ManifestError, dump_manifest, index_by_domain, load_manifest, spec_from_dict


def test_url_form_and_defaults():
    s = spec_from_dict({"url": "http://Gogle.COM/", "branches": [{"dialogs": [{"message": "m", "at_ms": 3}]}]})
    assert s.domain == "gogle.com"
    b = s.branches[0]
    assert b.ua_pattern == "*" and b.load_ms == 0 and not b.never_finishes
    assert b.dialogs[0].kind == "alert" and not b.dialogs[0].loop
    assert s.truth.category is None and not s.truth.malicious


def test_first_matching_branch_wins():
    s = spec_from_dict({"domain": "a.test", "branches": [
        {"ua_pattern": "iPhone", "load_ms": 1}, {"ua_pattern": "Mobile", "load_ms": 2}, {"ua_pattern": "*", "load_ms": 3}]})
    assert s.branch_for("x iPhone Mobile").load_ms == 1
    assert s.branch_for("Android Mobile").load_ms == 2
    assert s.branch_for("desktop").load_ms == 3


@pytest.mark.parametrize("entry", [
    {"branches": []},
    {"domain": "a.test", "branches": [{"dialogs": [{"message": "m"}]}]},
    {"domain": "a.test", "branches": [{"dialogs": [{"message": "m", "at_ms": 1, "kind": "toast"}]}]},
    {"domain": "a.test", "branches": [{"load_ms": -1}]},
    {"domain": "a.test", "branches": [], "truth": {"category": "LOTTERY", "malicious": False}},
    {"domain": "a.test", "branches": [], "truth": {"category": "SPAM"}},
])
def test_bad_entries(entry):
    with pytest.raises(ManifestError):
        spec_from_dict(entry)


def test_round_trip_and_duplicates(tmp_path):
    specs = [spec_from_dict({"domain": "a.test", "branches": [
        {"ua_pattern": "*", "load_ms": 5, "never_finishes": True,
         "dialogs": [{"message": "中奖 🎉", "at_ms": 1, "kind": "prompt", "loop": True}]}],
        "truth": {"category": "APK", "language": "zh", "malicious": True, "targeted_profiles": ["androidchrome"]}})]
    p = tmp_path / "m.json"
    dump_manifest(specs, p)
    assert load_manifest(p) == specs
    with pytest.raises(ManifestError, match="duplicate"):
        index_by_domain(specs + specs)
    p.write_text("{}")
    with pytest.raises(ManifestError):
        load_manifest(p)
