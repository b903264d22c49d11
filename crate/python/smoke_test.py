"""Smoke test for the stdsnn_py extension module.

From the repository root, either

    maturin develop --release -m crates/python/Cargo.toml
    python python/smoke_test.py

or without maturin:

    cargo build --release -p stdsnn-py --features extension-module
    cp target/release/libstdsnn_py.so python/stdsnn_py.so
    python python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import stdsnn_py as st


def main():
    data = st.Dataset.generate("2x2,3x1", (2, 32, 32), seed=1)
    assert len(data) == 3 and data.scan_counts() == [2, 2, 3]
    assert data.num_pairs("sequential") == 1 + 1 + 3
    assert dict(data.sequential_pairs())["P03"] == [(1, 2), (1, 3), (2, 3)]

    with tempfile.TemporaryDirectory() as tmp:
        manifest = data.save(tmp)
        again = st.Dataset.load(manifest)
        assert again.patient_ids() == data.patient_ids()

        model = st.Model(height=32, width=32, base_width=4, seed=0)
        losses = model.fit(data, epochs=3, learning_rate=1e-3, batch_size=4)
        assert len(losses) == 3 and all(math.isfinite(l) for l in losses)
        assert model.epoch == 3

        path = os.path.join(tmp, "model.stdw")
        model.save(path)
        loaded = st.Model.load(path)
        assert loaded.num_parameters() == model.num_parameters()

        n, h, w = 1, 32, 32
        x1 = [((i * 7) % 13) / 13.0 for i in range(n * h * w)]
        x2 = [((i * 5) % 11) / 11.0 for i in range(n * h * w)]
        p1, p2 = loaded.predict(x1, x2, (n, h, w))
        q2, q1 = loaded.predict(x2, x1, (n, h, w))
        assert p1 == q1 and p2 == q2, "swap equivariance"
        classes = len(st.CLASS_NAMES)
        for px in range(h * w):
            s = sum(p1[c * h * w + px] for c in range(classes))
            assert abs(s - 1.0) < 1e-5

        report = loaded.evaluate(data)
        assert set(report) >= {"dsc", "jaccard", "ppv", "per_class"}

    assert st.metrics(2, 1, 1) == (4 / 6, 0.5, 2 / 3)
    assert st.metrics(0, 0, 0) == (None, None, None)
    t, df, p = st.welch_t_test([1, 2, 3, 4], [3, 4, 5, 6])
    assert abs(t + 2.1908902300206647) < 1e-9 and df == 6.0 and abs(p - 0.0709876543) < 1e-8
    print("stdsnn_py smoke test passed")


if __name__ == "__main__":
    main()
