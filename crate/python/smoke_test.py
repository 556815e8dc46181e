#!/usr/bin/env python3
"""Smoke test for the t2a_eval_py extension module.

Builds the bindings if necessary, imports them straight from the cargo
target directory, and drives a miniature end-to-end run: synthesize a
two-event mixture, score it against the correct and reversed captions with
the stub provider, train a small quality predictor, and check the metric
helpers on hand-worked values.

Usage:
    cargo build -p t2a-eval-py --release
    python3 python/smoke_test.py
"""

import math
import os
import shutil
import sys
import tempfile

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_bindings():
    """Copy the built cdylib next to a temp dir as t2a_eval_py.so and import."""
    override = os.environ.get("T2A_EVAL_PY_LIB")
    candidates = [override] if override else [
        os.path.join(REPO_ROOT, "target", profile, "libt2a_eval_py.so")
        for profile in ("release", "debug")
    ]
    lib = next((c for c in candidates if c and os.path.isfile(c)), None)
    if lib is None:
        sys.exit(
            "libt2a_eval_py.so not found; run `cargo build -p t2a-eval-py --release` first"
        )
    stage = tempfile.mkdtemp(prefix="t2a_eval_py_")
    shutil.copy(lib, os.path.join(stage, "t2a_eval_py.so"))
    sys.path.insert(0, stage)
    import t2a_eval_py

    return t2a_eval_py


def main():
    t2a = import_bindings()
    print(f"imported t2a_eval_py {t2a.__version__}")

    # --- caption decomposition -------------------------------------------
    events = t2a.EventList.decompose("a dog barks, then a horn honks")
    assert events.events == ["a dog barks", "a horn honks"], events.events
    assert events.relations == [(0, 1, "BEFORE")], events.relations
    assert events.reverse_caption() == "a horn honks, then a dog barks"
    sim_list = t2a.EventList.decompose("a bell rings as rain falls")
    assert sim_list.relations == [(0, 1, "SIMULTANEOUS")]
    print("caption decomposition ok")

    # --- stub scoring end to end -----------------------------------------
    provider = t2a.Provider.stub()
    clip = t2a.synth_mixture(
        "two-band",
        16000,
        5.0,
        [(440.0, 0.5, 1.5, 0.4), (1000.0, 2.5, 3.5, 0.4)],
    )
    assert abs(clip.duration_seconds() - 5.0) < 1e-9

    ordered = t2a.score_pair(clip, "a dog barks, then a horn honks", provider)
    assert ordered["eos"] >= 0.99, ordered
    assert ordered["ess"] == 1.0, ordered
    assert ordered["ess_counts"] == {"C": 2, "D": 0, "n": 2}
    assert ordered["ahq"] is None

    reversed_record = t2a.score_pair(clip, "a horn honks, then a dog barks", provider)
    assert reversed_record["ess"] == -1.0, reversed_record

    onset, offset, detected = provider.separate(clip, "a dog barks").detect_span()
    assert detected and abs(onset - 0.5) <= 0.011 and abs(offset - 1.5) <= 0.011
    print("stub scoring ok (ESS 1.0 ordered / -1.0 reversed, EOS >= 0.99)")

    # --- embedding determinism and alignment ------------------------------
    v1, v2 = t2a.similarity, t2a.Provider.stub()
    a = provider.embed_text(["a dog barks"])[0]
    b = v2.embed_text(["a dog barks"])[0]
    assert a == b, "stub embeddings must be bitwise stable across providers"
    stem = provider.separate(clip, "a dog barks")
    audio_vec = provider.embed_audio([stem])[0]
    assert v1(a, audio_vec) >= 0.99
    assert v1(provider.embed_text(["a horn honks"])[0], audio_vec) < 0.2
    print("embedding alignment ok")

    # --- quality predictor -------------------------------------------------
    zero = t2a.AhqModel.zeroed(8)
    assert abs(zero.predict([1.0] + [0.0] * 7) - 2.5) < 1e-9

    import random

    rng = random.Random(17)
    dim = 32
    centroids = [[rng.gauss(0, 1) for _ in range(dim)] for _ in range(4)]
    data = []
    for i in range(240):
        c = i % 4
        data.append(
            ([x + 0.15 * rng.gauss(0, 1) for x in centroids[c]], c + 1)
        )
    model, losses = t2a.AhqModel.train_with_trace(data, rng_seed=5)
    assert len(losses) == 6
    acc = model.accuracy(data)
    assert acc >= 0.95, f"train accuracy {acc}"
    for embedding, _ in data[:8]:
        assert 1.0 <= model.predict(embedding) <= 4.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.bin")
        model.save(path)
        back = t2a.AhqModel.load(path)
        assert back.dim == dim and back.hidden == 64
        for embedding, _ in data[:4]:
            assert abs(back.predict(embedding) - model.predict(embedding)) < 1e-6
    print(f"quality predictor ok (train accuracy {acc:.3f})")

    # --- ranking and pairs --------------------------------------------------
    pool = [
        {"audio_id": "good", "eos": 0.9, "ess": 0.8, "ahq": 3.5},
        {"audio_id": "mid", "eos": 0.5, "ess": 0.1, "ahq": 2.4},
        {"audio_id": "bad", "eos": 0.2, "ess": -0.7, "ahq": 1.2},
    ]
    ranking = t2a.rank_pool("caption", pool)
    assert ranking == [("good", 1), ("mid", 2), ("bad", 3)], ranking
    pairs = t2a.emit_pairs("caption", pool, policy="best-worst")
    assert len(pairs) == 1
    assert pairs[0]["chosen"] == "good" and pairs[0]["rejected"] == "bad"
    assert pairs[0]["rank_gap"] == 2
    print("ranking and pair emission ok")

    # --- inventory and prompt composition -----------------------------------
    inventory, skipped = t2a.build_event_inventory(
        ["a dog barks, then a horn honks", "", "rain falls"], provider
    )
    assert inventory == ["a dog barks", "a horn honks", "rain falls"]
    assert skipped == 1
    prompts = t2a.compose_prompts(inventory, 2, 2, rng_seed=3)
    assert prompts == t2a.compose_prompts(inventory, 2, 2, rng_seed=3)
    assert all(", then " in p for p in prompts)
    print("inventory and prompts ok")

    # --- metric helpers ------------------------------------------------------
    f1 = t2a.segment_f1(
        [([("dog", [(2.0, 5.0)], 10.0)], [("dog", [(3.0, 7.0)], 10.0)])]
    )
    assert abs(f1 - 4.0 / 7.0) < 1e-12, f1
    rho = t2a.correlation([1, 2, 3, 4, 5], [2, 1, 4, 3, 5], kind="spearman")
    assert abs(rho - 0.8) < 1e-12, rho
    assert t2a.win_rate([1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 0.0]) == 62.5
    assert t2a.win_rate([1.0, 2.0], [1.0, 2.0]) == 50.0
    print("metric helpers ok")

    # --- fixture corpus -------------------------------------------------------
    with tempfile.TemporaryDirectory() as d:
        manifest = t2a.write_fixture_corpus(d, seed=11, captions=1)
        assert os.path.isfile(manifest)
        with open(manifest) as fh:
            rows = [line for line in fh if line.strip()]
        assert len(rows) == 3
        wavs = [f for f in os.listdir(d) if f.endswith(".wav")]
        assert len(wavs) == 3
        loaded = t2a.AudioClip.load_wav(os.path.join(d, wavs[0]))
        assert loaded.sample_rate == 16000
    print("fixture corpus ok")

    lexicon = t2a.default_stub_lexicon()
    assert len(lexicon) == 6 and lexicon[0][0] == "a dog barks"

    print("\nsmoke test passed")


if __name__ == "__main__":
    main()
