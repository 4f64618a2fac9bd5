"""Smoke test for the d2t extension module.

Build and run from the repository root:

    cargo build --release -p d2t-python --features extension-module
    cp target/release/libd2t.so python/d2t.so
    python3 python/smoke_test.py
"""

import json
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import d2t  # noqa: E402


def main():
    splits = d2t.synth(seed=7, n_train=40, n_dev=6, n_test=8)
    assert len(splits["train"]) == 40 and len(splits["test"]) == 8
    subsets = {json.loads(line)["seen"] for line in splits["test"]}
    assert subsets == {True, False}

    canon, report = d2t.parse("webnlg", splits["train"] + ['{"id": "bad"}'])
    assert report["parsed"] == 40 and report["rejected"] == 1
    assert canon == splits["train"]

    source = d2t.linearize(splits["train"][0])
    assert source.startswith("translate from Graph to Text:"), source

    texts = d2t.synth_text(seed=7, n_docs=40)
    corpus = texts + [d2t.linearize(l) for l in splits["train"]]
    corpus += [json.loads(l)["references"][0] for l in splits["train"]]
    vocab = d2t.Vocab.train(corpus, 240)
    assert vocab.decode(vocab.encode(texts[0])) == texts[0]

    ids = vocab.encode(texts[1])
    inp, tgt = d2t.span_corrupt(ids, seed=3)
    assert d2t.splice(inp, tgt) == ids

    pre = d2t.Model.pretrain(texts, vocab, seed=1, max_steps=5, batch_size=4)
    model = d2t.Model.finetune(
        splits["train"], splits["dev"], vocab, seed=2, init=pre,
        max_steps=10, eval_every=5, batch_size=4, dev_max_len=16,
    )
    assert model.step in (5, 10) and model.dev_bleu is not None

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.d2tf")
        model.save(path)
        again = d2t.Model.load(path)
        assert again.hash() == model.hash()
        vpath = os.path.join(tmp, "v.json")
        vocab.save(vpath)
        assert d2t.Vocab.load(vpath).hash() == vocab.hash()

    greedy = model.predict(vocab, splits["test"], max_len=16)
    beam = model.predict(vocab, splits["test"], beam=3, max_len=16)
    assert len(greedy) == len(beam) == 8

    refs = [json.loads(l)["references"] for l in splits["test"]]
    assert d2t.corpus_bleu([r[0] for r in refs], refs) == 100.0
    scores = d2t.evaluate(splits["test"], greedy, metrics="bleu,parent,meteor")
    names = [s["subset"] for s in scores["subsets"]]
    assert names == ["overall", "seen", "unseen"], names

    try:
        d2t.Vocab.train(["abc"], 5)
    except ValueError:
        pass
    else:
        raise AssertionError("tiny vocab accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
