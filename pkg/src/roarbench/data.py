"""Synthetic dataset generators with planted evidence, plus JSONL I/O.

Vocabularies are closed: every token string is minted by a generator,
so loading never needs an UNK fallback.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ._util import canonical_json, sha256_hex
from .errors import ConfigError, ContractViolation, DatasetParseError

PAD, MASK, BOS, EOS, SEP = 0, 1, 2, 3, 4
RESERVED_TOKENS = ["[PAD]", "[MASK]", "[BOS]", "[EOS]", "[SEP]"]
SPECIAL_IDS = frozenset({PAD, MASK, BOS, EOS, SEP})
# [MASK] is a legitimate content stand-in: models may attend it and the
# masking module may (re-)select it; the structural specials may not.
STRUCTURAL_IDS = frozenset({PAD, BOS, EOS, SEP})

SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True)
class Observation:
    obs_id: str
    ids: tuple
    label: int
    aux_ids: tuple = None
    evidence: tuple = None

    def maskable_positions(self):
        return tuple(i for i, t in enumerate(self.ids)
                     if t not in STRUCTURAL_IDS)


@dataclass(frozen=True)
class TokenDataset:
    vocab: tuple
    splits: dict
    meta: dict

    def token_id(self, token):
        return self.vocab.index(token)

    def digest(self):
        payload = {
            "vocab": list(self.vocab),
            "meta": self.meta,
            "splits": {name: [_obs_record(o, self.vocab) for o in obs]
                       for name, obs in self.splits.items()},
        }
        return sha256_hex(canonical_json(payload))

    def classes(self):
        params = self.meta.get("params") or {}
        if "classes" in params:
            return int(params["classes"])
        if "locations" in params:
            return int(params["locations"])
        labels = [o.label for obs in self.splits.values() for o in obs]
        if not labels:
            raise ContractViolation("cannot infer classes from an empty "
                                    "dataset")
        return int(max(labels)) + 1


@dataclass(frozen=True)
class TabularDataset:
    """Eq-style 16-feature task: 4 informative features, label = sign of z."""
    a: np.ndarray
    d: np.ndarray
    seed: int
    splits: dict = field(default_factory=dict)

    def digest(self):
        payload = {
            "a": self.a.tolist(),
            "d": self.d.tolist(),
            "seed": self.seed,
            "splits": {name: {"x": x.tolist(), "y": y.tolist()}
                       for name, (x, y) in self.splits.items()},
        }
        return sha256_hex(canonical_json(payload))


N_FEATURES = 16
N_INFORMATIVE = 4


def gen_tabular(n_train, n_validation, n_test, seed):
    """x = a*z/10 + d*eta + eps/10 with z, eta scalar and eps a 16-vector.

    a and d are sampled once per dataset; a is zeroed beyond the first 4
    entries so exactly 4 features carry signal. label = 1 iff z > 0.
    """
    for n in (n_train, n_validation, n_test):
        if n < 0:
            raise ConfigError("split sizes must be non-negative")
    if n_train < 1 or n_test < 1:
        raise ConfigError("train and test splits must be non-empty")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(N_FEATURES)
    a[N_INFORMATIVE:] = 0.0
    d = rng.standard_normal(N_FEATURES)
    splits = {}
    for name, n in zip(SPLIT_NAMES, (n_train, n_validation, n_test)):
        z = rng.standard_normal(n)
        eta = rng.standard_normal(n)
        eps = rng.standard_normal((n, N_FEATURES))
        x = np.outer(z, a) / 10.0 + np.outer(eta, d) + eps / 10.0
        y = (z > 0).astype(np.int64)
        splits[name] = (x, y)
    return TabularDataset(a=a, d=d, seed=seed, splits=splits)


def _finish_dataset(vocab, rows, meta):
    splits = {}
    for name, obs_list in rows.items():
        splits[name] = tuple(obs_list)
    return TokenDataset(vocab=tuple(vocab), splits=splits, meta=meta)


def gen_keyword_lookup(n_train=2000, n_validation=500, n_test=500, classes=2,
                       distractors=30, redundancy=1, length=12, seed=0):
    """Sequences with `redundancy` copies of a class-indicative keyword.

    `length` counts the full sequence including [BOS]/[EOS]; the content
    region holds exactly `redundancy` evidence copies at uniformly random
    positions among label-independent distractors. Any surviving copy
    suffices to classify, so redundancy >= 2 plants a true dataset
    redundancy.
    """
    content = length - 2
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    if redundancy < 1:
        raise ConfigError("redundancy must be >= 1")
    if content < redundancy:
        raise ConfigError("sequence length too short for the evidence copies")
    if distractors < 1:
        raise ConfigError("need at least 1 distractor token")
    vocab = list(RESERVED_TOKENS)
    key_ids = []
    for c in range(classes):
        key_ids.append(len(vocab))
        vocab.append(f"key{c}")
    dis_ids = []
    for i in range(distractors):
        dis_ids.append(len(vocab))
        vocab.append(f"w{i:03d}")
    rng = np.random.default_rng(seed)
    rows = {}
    for split, n in zip(SPLIT_NAMES, (n_train, n_validation, n_test)):
        obs_list = []
        for i in range(n):
            label = int(rng.integers(classes))
            body = rng.choice(dis_ids, size=content).astype(np.int64)
            spots = rng.choice(content, size=redundancy, replace=False)
            body[spots] = key_ids[label]
            ids = (BOS,) + tuple(int(t) for t in body) + (EOS,)
            evidence = tuple(sorted(int(s) + 1 for s in spots))
            obs_list.append(Observation(obs_id=f"{split}/{i}", ids=ids,
                                        label=label, evidence=evidence))
        rows[split] = obs_list
    meta = {"kind": "keyword", "seed": seed,
            "params": {"n_train": n_train, "n_validation": n_validation,
                       "n_test": n_test, "classes": classes,
                       "distractors": distractors, "redundancy": redundancy,
                       "length": length}}
    return _finish_dataset(vocab, rows, meta)


def gen_leakage_probe(n_train=2000, n_validation=500, n_test=500, classes=2,
                      distractors=30, length=12, seed=0,
                      leak_precision=0.6):
    """Keyword task (one evidence copy) plus a planted leaking token.

    The `leak` token appears with probability p0 in class-0 examples and
    p1 = 1 - p0 in class-1 examples, where p0 = leak_precision, so
    P(class 0 | leak present) = leak_precision under the uniform prior.
    """
    if classes != 2:
        raise ConfigError("the leakage probe is a binary task")
    if not 0.5 < leak_precision < 1.0:
        raise ConfigError("leak_precision must sit in (0.5, 1)")
    content = length - 2
    if content < 2:
        raise ConfigError("sequence too short for evidence plus leak token")
    vocab = list(RESERVED_TOKENS)
    key_ids = []
    for c in range(classes):
        key_ids.append(len(vocab))
        vocab.append(f"key{c}")
    leak_id = len(vocab)
    vocab.append("leak")
    dis_ids = []
    for i in range(distractors):
        dis_ids.append(len(vocab))
        vocab.append(f"w{i:03d}")
    rng = np.random.default_rng(seed)
    rows = {}
    for split, n in zip(SPLIT_NAMES, (n_train, n_validation, n_test)):
        obs_list = []
        for i in range(n):
            label = int(rng.integers(classes))
            body = rng.choice(dis_ids, size=content).astype(np.int64)
            p_leak = leak_precision if label == 0 else 1.0 - leak_precision
            has_leak = bool(rng.random() < p_leak)
            n_planted = 2 if has_leak else 1
            spots = rng.choice(content, size=n_planted, replace=False)
            body[spots[0]] = key_ids[label]
            if has_leak:
                body[spots[1]] = leak_id
            ids = (BOS,) + tuple(int(t) for t in body) + (EOS,)
            obs_list.append(Observation(obs_id=f"{split}/{i}", ids=ids,
                                        label=label,
                                        evidence=(int(spots[0]) + 1,)))
        rows[split] = obs_list
    meta = {"kind": "leakage", "seed": seed,
            "params": {"n_train": n_train, "n_validation": n_validation,
                       "n_test": n_test, "classes": classes,
                       "distractors": distractors, "length": length,
                       "leak_precision": leak_precision}}
    return _finish_dataset(vocab, rows, meta)


def gen_paired_lookup(n_train=2000, n_validation=500, n_test=500, entities=6,
                      locations=4, max_statements=3, seed=0):
    """Stories of entity-location statements; the auxiliary sequence asks
    where one entity is and the label is that entity's location.

    Statements use distinct entities, so the queried statement is the
    unique evidence; its location token is the annotated evidence
    position.
    """
    if entities < 2 or locations < 2:
        raise ConfigError("need at least 2 entities and 2 locations")
    if max_statements < 1 or max_statements > entities:
        raise ConfigError("max_statements must sit in [1, entities]")
    vocab = list(RESERVED_TOKENS)
    ent_ids = []
    for e in range(entities):
        ent_ids.append(len(vocab))
        vocab.append(f"ent{e}")
    loc_ids = []
    for l in range(locations):
        loc_ids.append(len(vocab))
        vocab.append(f"loc{l}")
    rng = np.random.default_rng(seed)
    rows = {}
    for split, n in zip(SPLIT_NAMES, (n_train, n_validation, n_test)):
        obs_list = []
        for i in range(n):
            m = int(rng.integers(1, max_statements + 1))
            ents = rng.choice(entities, size=m, replace=False)
            locs = rng.integers(0, locations, size=m)
            q = int(rng.integers(m))
            ids = [BOS]
            evidence_pos = None
            for j in range(m):
                if j > 0:
                    ids.append(SEP)
                ids.append(ent_ids[int(ents[j])])
                if j == q:
                    evidence_pos = len(ids)
                ids.append(loc_ids[int(locs[j])])
            ids.append(EOS)
            aux = (BOS, ent_ids[int(ents[q])], EOS)
            obs_list.append(Observation(obs_id=f"{split}/{i}",
                                        ids=tuple(ids),
                                        label=int(locs[q]),
                                        aux_ids=aux,
                                        evidence=(evidence_pos,)))
        rows[split] = obs_list
    meta = {"kind": "paired", "seed": seed,
            "params": {"n_train": n_train, "n_validation": n_validation,
                       "n_test": n_test, "entities": entities,
                       "locations": locations,
                       "max_statements": max_statements}}
    return _finish_dataset(vocab, rows, meta)


GENERATORS = {
    "keyword": gen_keyword_lookup,
    "leakage": gen_leakage_probe,
    "paired": gen_paired_lookup,
}


def _obs_record(obs, vocab):
    return {
        "tokens": [vocab[t] for t in obs.ids],
        "aux_tokens": None if obs.aux_ids is None
        else [vocab[t] for t in obs.aux_ids],
        "label": obs.label,
        "evidence": None if obs.evidence is None else list(obs.evidence),
    }


def save_jsonl(dataset, out_dir):
    """Write one JSONL file per split plus a metadata sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    for name in SPLIT_NAMES:
        path = os.path.join(out_dir, f"{name}.jsonl")
        with open(path, "w") as fh:
            for obs in dataset.splits.get(name, ()):
                fh.write(canonical_json(_obs_record(obs, dataset.vocab)))
                fh.write("\n")
    meta = dict(dataset.meta)
    meta["vocabulary"] = list(dataset.vocab)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        fh.write(canonical_json(meta))
        fh.write("\n")


def _parse_tokens(value, lookup, path, line_no, field_name):
    if not isinstance(value, list) or not value:
        raise DatasetParseError(path, line_no, f"'{field_name}' must be a "
                                "non-empty token list")
    ids = []
    for tok in value:
        if tok not in lookup:
            raise DatasetParseError(path, line_no,
                                    f"unknown token {tok!r} (closed vocabulary)")
        ids.append(lookup[tok])
    return tuple(ids)


def load_jsonl(in_dir):
    meta_path = os.path.join(in_dir, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise DatasetParseError(meta_path, 0, "metadata sidecar missing")
    except json.JSONDecodeError as exc:
        raise DatasetParseError(meta_path, exc.lineno, "invalid JSON")
    vocab = meta.pop("vocabulary", None)
    if not vocab or vocab[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
        raise DatasetParseError(meta_path, 0, "vocabulary missing or lacks "
                                "the reserved tokens")
    lookup = {tok: i for i, tok in enumerate(vocab)}
    splits = {}
    for name in SPLIT_NAMES:
        path = os.path.join(in_dir, f"{name}.jsonl")
        obs_list = []
        try:
            fh = open(path)
        except FileNotFoundError:
            raise DatasetParseError(path, 0, "split file missing")
        with fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    raise DatasetParseError(path, line_no, "invalid JSON")
                if "label" not in rec:
                    raise DatasetParseError(path, line_no, "record missing 'label'")
                if not isinstance(rec["label"], int):
                    raise DatasetParseError(path, line_no, "'label' must be an int")
                ids = _parse_tokens(rec.get("tokens"), lookup, path, line_no,
                                    "tokens")
                aux = rec.get("aux_tokens")
                aux_ids = None if aux is None else _parse_tokens(
                    aux, lookup, path, line_no, "aux_tokens")
                ev = rec.get("evidence")
                if ev is not None:
                    if (not isinstance(ev, list)
                            or any(not isinstance(p, int) for p in ev)
                            or any(not 0 <= p < len(ids) for p in ev)):
                        raise DatasetParseError(path, line_no,
                                                "'evidence' positions invalid")
                    ev = tuple(ev)
                obs_list.append(Observation(obs_id=f"{name}/{len(obs_list)}",
                                            ids=ids, label=rec["label"],
                                            aux_ids=aux_ids, evidence=ev))
        splits[name] = tuple(obs_list)
    return TokenDataset(vocab=tuple(vocab), splits=splits, meta=meta)
