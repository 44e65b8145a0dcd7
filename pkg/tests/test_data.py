"""Dataset generators: planted-evidence correctness, statistical structure
of the tabular task, JSONL round trips, and parse diagnostics."""

import json
import os

import numpy as np
import pytest

from roarbench.data import (BOS, EOS, MASK, PAD, SEP, RESERVED_TOKENS,
                            SPECIAL_IDS, STRUCTURAL_IDS, Observation,
                            TokenDataset, gen_keyword_lookup,
                            gen_leakage_probe, gen_paired_lookup, gen_tabular,
                            load_jsonl, save_jsonl)
from roarbench.errors import ConfigError, ContractViolation, DatasetParseError
from roarbench.harness import fit_logistic, _tabular_accuracy
from roarbench.masking import MaskState, apply_mask, mask_tabular
from roarbench.models import ModelConfig, evaluate, train

from helpers import (bayes_rate_mc, binom_3sigma, keyword_rule_predict,
                     paired_rule_predict)


def test_reserved_id_table():
    assert (PAD, MASK, BOS, EOS, SEP) == (0, 1, 2, 3, 4)
    assert RESERVED_TOKENS == ["[PAD]", "[MASK]", "[BOS]", "[EOS]", "[SEP]"]
    assert SPECIAL_IDS == frozenset({0, 1, 2, 3, 4})
    assert STRUCTURAL_IDS == frozenset({0, 2, 3, 4})
    assert MASK not in STRUCTURAL_IDS
    for gen in (gen_keyword_lookup, gen_leakage_probe, gen_paired_lookup):
        ds = gen(8, 4, 4, seed=0)
        assert list(ds.vocab[:5]) == RESERVED_TOKENS


def test_maskable_positions_include_mask_token():
    obs = Observation(obs_id="t/0", ids=(BOS, 5, MASK, SEP, 6, EOS, PAD),
                      label=0)
    assert obs.maskable_positions() == (1, 2, 4)


def test_keyword_evidence_marks_planted_keys():
    ds = gen_keyword_lookup(40, 10, 10, classes=3, redundancy=2, seed=7)
    keys = [ds.token_id(f"key{c}") for c in range(3)]
    for split in ds.splits.values():
        for obs in split:
            assert len(obs.evidence) == 2
            own = keys[obs.label]
            for pos in obs.evidence:
                assert obs.ids[pos] == own
                assert 1 <= pos <= len(obs.ids) - 2
            assert sum(1 for t in obs.ids if t == own) == 2
            others = set(keys) - {own}
            assert not others & set(obs.ids)
            assert obs.ids[0] == BOS and obs.ids[-1] == EOS


def test_keyword_redundancy_survives_single_masking():
    ds = gen_keyword_lookup(30, 5, 5, redundancy=2, seed=1)
    keys = [ds.token_id("key0"), ds.token_id("key1")]
    for obs in ds.splits["train"]:
        one = MaskState(obs_id=obs.obs_id,
                        masked=frozenset(obs.evidence[:1]))
        assert keyword_rule_predict(apply_mask(obs, one), keys) == obs.label
        both = MaskState(obs_id=obs.obs_id, masked=frozenset(obs.evidence))
        assert keyword_rule_predict(apply_mask(obs, both), keys) == -1


def test_keyword_single_copy_masking_removes_evidence():
    ds = gen_keyword_lookup(30, 5, 5, redundancy=1, seed=2)
    keys = {ds.token_id("key0"), ds.token_id("key1")}
    for obs in ds.splits["train"]:
        state = MaskState(obs_id=obs.obs_id, masked=frozenset(obs.evidence))
        masked = apply_mask(obs, state)
        assert not keys & set(masked.ids)
        assert len(masked.ids) == len(obs.ids)


def test_tabular_informative_structure():
    ds = gen_tabular(20000, 0, 1000, seed=0)
    assert np.all(ds.a[4:] == 0.0)
    assert np.any(ds.a[:4] != 0.0)
    x, y = ds.splits["train"]
    assert x.shape == (20000, 16)
    assert abs(float(y.mean()) - 0.5) <= binom_3sigma(0.5, 20000)
    # E[x_i | y] separates with the sign of a_i; check the strong features
    diff = x[y == 1].mean(axis=0) - x[y == 0].mean(axis=0)
    for i in range(4):
        if abs(ds.a[i]) >= 0.5:
            assert np.sign(diff[i]) == np.sign(ds.a[i])


def test_tabular_lr_approaches_bayes_rate():
    ds = gen_tabular(8000, 0, 4000, seed=0)
    w, b = fit_logistic(*ds.splits["train"])
    acc = _tabular_accuracy(w, b, *ds.splits["test"])
    bayes = bayes_rate_mc(ds.a, ds.d, n=100000, seed=1)
    assert 0.5 < acc <= 1.0
    assert abs(acc - bayes) <= 0.03


def test_tabular_masked_informative_is_chance():
    for seed in (1, 2, 3, 4, 5):
        ds = gen_tabular(1000, 0, 4000, seed=seed)
        x_train, y_train = ds.splits["train"]
        x_test, y_test = ds.splits["test"]
        informative = {0, 1, 2, 3}
        w, b = fit_logistic(mask_tabular(x_train, informative), y_train)
        acc = _tabular_accuracy(w, b, mask_tabular(x_test, informative),
                                y_test)
        assert abs(acc - 0.5) <= 0.05


def test_tabular_split_size_validation():
    with pytest.raises(ConfigError):
        gen_tabular(0, 0, 10, seed=0)
    with pytest.raises(ConfigError):
        gen_tabular(10, -1, 10, seed=0)


def test_leakage_token_frequencies():
    ds = gen_leakage_probe(4000, 100, 100, seed=3, leak_precision=0.6)
    leak = ds.token_id("leak")
    keys = [ds.token_id("key0"), ds.token_id("key1")]
    rates = {}
    for label in (0, 1):
        group = [o for o in ds.splits["train"] if o.label == label]
        with_leak = sum(1 for o in group if leak in o.ids)
        rates[label] = with_leak / len(group)
        expected = 0.6 if label == 0 else 0.4
        assert abs(rates[label] - expected) <= binom_3sigma(expected,
                                                            len(group))
        for o in group:
            assert o.ids[o.evidence[0]] == keys[label]
    assert rates[0] > rates[1]


def test_leakage_parameter_validation():
    with pytest.raises(ConfigError):
        gen_leakage_probe(10, 5, 5, classes=3)
    with pytest.raises(ConfigError):
        gen_leakage_probe(10, 5, 5, leak_precision=0.5)
    with pytest.raises(ConfigError):
        gen_leakage_probe(10, 5, 5, leak_precision=1.0)


def test_paired_statement_structure_and_rule():
    ds = gen_paired_lookup(300, 60, 100, seed=0)
    ent_ids = {ds.token_id(f"ent{e}") for e in range(6)}
    loc_ids = [ds.token_id(f"loc{l}") for l in range(4)]
    loc_to_label = {tid: l for l, tid in enumerate(loc_ids)}
    for split in ds.splits.values():
        for obs in split:
            assert obs.aux_ids[0] == BOS and obs.aux_ids[-1] == EOS
            assert obs.aux_ids[1] in ent_ids
            pos = obs.evidence[0]
            assert obs.ids[pos] in loc_to_label
            assert loc_to_label[obs.ids[pos]] == obs.label
            assert obs.ids[pos - 1] == obs.aux_ids[1]
            ents_used = [t for t in obs.ids if t in ent_ids]
            assert len(ents_used) == len(set(ents_used))
            assert paired_rule_predict(obs, ent_ids, loc_to_label) == obs.label


def test_paired_parameter_validation():
    with pytest.raises(ConfigError):
        gen_paired_lookup(10, 5, 5, entities=1)
    with pytest.raises(ConfigError):
        gen_paired_lookup(10, 5, 5, max_statements=9, entities=4)


def test_paired_model_reaches_desk_accuracy():
    ds = gen_paired_lookup()
    config = ModelConfig(arch="bilstm-attention-paired",
                         vocab_size=len(ds.vocab), classes=ds.classes())
    for seed in (1, 2, 3, 4, 5):
        model = train(config, ds.splits, seed=seed)
        assert evaluate(model, ds.splits["test"]) > 0.9


def test_keyword_generator_validation():
    with pytest.raises(ConfigError):
        gen_keyword_lookup(10, 5, 5, classes=1)
    with pytest.raises(ConfigError):
        gen_keyword_lookup(10, 5, 5, redundancy=0)
    with pytest.raises(ConfigError):
        gen_keyword_lookup(10, 5, 5, redundancy=4, length=5)
    with pytest.raises(ConfigError):
        gen_keyword_lookup(10, 5, 5, distractors=0)


def test_jsonl_round_trip_and_byte_stability(tmp_path):
    ds = gen_keyword_lookup(20, 8, 8, redundancy=2, seed=5)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    save_jsonl(ds, out_a)
    save_jsonl(ds, out_b)
    for name in ("train.jsonl", "validation.jsonl", "test.jsonl",
                 "meta.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    loaded = load_jsonl(out_a)
    assert loaded.vocab == ds.vocab
    assert loaded.digest() == ds.digest()
    for name in ("train", "validation", "test"):
        for orig, back in zip(ds.splits[name], loaded.splits[name]):
            assert back.ids == orig.ids
            assert back.label == orig.label
            assert back.aux_ids == orig.aux_ids
            assert back.evidence == orig.evidence


def test_jsonl_round_trip_paired(tmp_path):
    ds = gen_paired_lookup(12, 6, 6, seed=9)
    save_jsonl(ds, tmp_path / "d")
    loaded = load_jsonl(tmp_path / "d")
    assert loaded.digest() == ds.digest()
    assert loaded.splits["train"][0].aux_ids is not None


def _corrupt_line(path, line_no, new_line):
    lines = path.read_text().splitlines()
    lines[line_no - 1] = new_line
    path.write_text("\n".join(lines) + "\n")


def test_jsonl_parse_errors_carry_location(tmp_path):
    ds = gen_keyword_lookup(6, 3, 3, seed=6)
    root = tmp_path / "d"
    save_jsonl(ds, root)
    train_path = root / "train.jsonl"
    pristine = train_path.read_text()

    _corrupt_line(train_path, 2, "{not json")
    with pytest.raises(DatasetParseError) as err:
        load_jsonl(root)
    assert err.value.line_no == 2
    assert str(train_path) in str(err.value)

    train_path.write_text(pristine)
    rec = json.loads(pristine.splitlines()[0])
    rec["tokens"][1] = "never-minted"
    _corrupt_line(train_path, 1, json.dumps(rec))
    with pytest.raises(DatasetParseError) as err:
        load_jsonl(root)
    assert err.value.line_no == 1
    assert "never-minted" in str(err.value)

    train_path.write_text(pristine)
    rec = json.loads(pristine.splitlines()[0])
    del rec["label"]
    _corrupt_line(train_path, 1, json.dumps(rec))
    with pytest.raises(DatasetParseError):
        load_jsonl(root)

    train_path.write_text(pristine)
    rec = json.loads(pristine.splitlines()[0])
    rec["evidence"] = [99]
    _corrupt_line(train_path, 1, json.dumps(rec))
    with pytest.raises(DatasetParseError):
        load_jsonl(root)


def test_jsonl_missing_files_and_bad_vocab(tmp_path):
    ds = gen_keyword_lookup(6, 3, 3, seed=6)
    root = tmp_path / "d"
    save_jsonl(ds, root)

    meta_path = root / "meta.json"
    meta = json.loads(meta_path.read_text())
    meta["vocabulary"] = meta["vocabulary"][1:]  # drop [PAD]
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(DatasetParseError):
        load_jsonl(root)

    os.remove(meta_path)
    with pytest.raises(DatasetParseError):
        load_jsonl(root)

    save_jsonl(ds, root)
    os.remove(root / "validation.jsonl")
    with pytest.raises(DatasetParseError):
        load_jsonl(root)


def test_generator_determinism():
    for gen in (gen_keyword_lookup, gen_leakage_probe, gen_paired_lookup):
        a = gen(12, 6, 6, seed=4)
        b = gen(12, 6, 6, seed=4)
        c = gen(12, 6, 6, seed=5)
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()
    ta = gen_tabular(20, 5, 5, seed=4)
    tb = gen_tabular(20, 5, 5, seed=4)
    tc = gen_tabular(20, 5, 5, seed=5)
    assert ta.digest() == tb.digest()
    assert ta.digest() != tc.digest()


def test_classes_inference():
    assert gen_keyword_lookup(6, 3, 3, classes=3, seed=0).classes() == 3
    assert gen_paired_lookup(6, 3, 3, locations=4, seed=0).classes() == 4
    bare = TokenDataset(
        vocab=tuple(RESERVED_TOKENS) + ("x",),
        splits={"train": (Observation(obs_id="train/0", ids=(BOS, 5, EOS),
                                      label=2),)},
        meta={})
    assert bare.classes() == 3
    empty = TokenDataset(vocab=tuple(RESERVED_TOKENS), splits={}, meta={})
    with pytest.raises(ContractViolation):
        empty.classes()
