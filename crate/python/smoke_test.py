#!/usr/bin/env python3
"""Smoke test for the clinitag_py extension module.

Builds nothing itself: it locates the cdylib produced by
`cargo build -p clinitag-py` (or `--release`), exposes it as an importable
module, and exercises the public API end to end. Exits non-zero on the first
failure.
"""

import shutil
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def locate_cdylib() -> Path:
    names = ["libclinitag_py.so", "libclinitag_py.dylib", "clinitag_py.dll"]
    candidates = []
    for profile in ("release", "debug"):
        for name in names:
            candidates.append(REPO_ROOT / "target" / profile / name)
    for path in candidates:
        if path.exists():
            return path
    sys.exit(
        "clinitag_py cdylib not found; run `cargo build -p clinitag-py` first\n"
        f"(searched {', '.join(str(c) for c in candidates)})"
    )


def import_module(tmp: Path):
    lib = locate_cdylib()
    ext_suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    target = tmp / f"clinitag_py{ext_suffix}"
    shutil.copyfile(lib, target)
    sys.path.insert(0, str(tmp))
    import clinitag_py  # noqa: E402

    return clinitag_py


TRAIN_TOML = """
train = ""
epochs = 60
learning_rate = 0.01
accumulation = 8
seed = 7

[model]
architecture = "crf-smax-tf"
hidden_size = 12
tag_embedding_dim = 8
word_vectors = { kind = "hashed", dim = 16 }
char = { char_emb_dim = 4, window = 3, out_dim = 6 }

[[model.heads]]
name = "ner"
weight = 0.0002

[[model.heads]]
name = "polarity"
weight = 1.0
"""

GEN_CONFIG = """
sentences=12
categories=problem,treatment
vocab_size=25
min_tokens=3
max_tokens=6
polarity_values=POS,NEG
neg_fraction=0.5
"""


def main() -> None:
    tmp = Path(tempfile.mkdtemp(prefix="clinitag-smoke-"))
    ct = import_module(tmp)
    print(f"imported clinitag_py {ct.__version__} from {locate_cdylib()}")

    # codec round trip
    tags = ct.encode_bilou([(1, 2, "problem")], 4, ["problem"])
    assert tags == ["O", "B-problem", "L-problem", "O"], tags
    assert ct.decode_bilou(tags) == [(1, 2, "problem")]
    repaired = ct.decode_bilou(["I-problem", "L-problem"], True)
    assert repaired == [(0, 1, "problem")], repaired
    print("codec: ok")

    # scoring
    p, r, f1 = ct.span_f1([(0, 1, "problem")], [(0, 1, "problem"), (3, 3, "test")])
    assert (p, r) == (0.5, 1.0) and abs(f1 - 2 / 3) < 1e-12
    assert ct.micro_identity([1, 2, 3, 2, 3, 3, 1, 2, 2], [3, 2, 1, 2, 2, 3, 3, 1, 2]) == 4 / 9
    assert ct.token_accuracy(["O", "B-x"], ["O", "O"]) == 0.5
    print("scoring: ok")

    # corpus generation, save, reload
    corpus = ct.Corpus.generate(11, GEN_CONFIG)
    assert corpus.num_sentences == 12
    assert "ner" in corpus.columns and "polarity" in corpus.columns
    corpus_path = tmp / "corpus.txt"
    corpus.save(str(corpus_path))
    reloaded = ct.Corpus.load(str(corpus_path))
    assert reloaded.to_text() == corpus.to_text()
    doc, tokens, columns = corpus.sentences()[0]
    assert doc == "synth" and len(tokens) == len(columns["ner"])
    print(f"corpus: ok ({corpus!r})")

    # train, predict, evaluate, checkpoint round trip
    model, log = ct.Model.train(TRAIN_TOML, corpus)
    assert "epoch 0060" in log
    assert model.heads == ["ner", "polarity"]
    metrics = model.evaluate(corpus)
    ner_f1 = metrics["ner"]["span_micro_f1"]
    assert ner_f1 > 0.9, f"expected memorization of 12 sentences, got {ner_f1}"
    prediction = model.predict(tokens)
    assert len(prediction["ner"][0]) == len(tokens)
    ckpt = tmp / "model.bin"
    model.save(str(ckpt))
    again = ct.Model.load(str(ckpt)).evaluate(corpus)
    assert again["ner"]["span_micro_f1"] == ner_f1
    print(f"model: ok (ner span F1 {ner_f1:.3f} after overfit)")

    print("smoke test passed")


if __name__ == "__main__":
    main()
