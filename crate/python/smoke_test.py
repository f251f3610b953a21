"""Smoke test for the `afs` extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or build
`cargo build -p afs-python --release` and put `target/release/libafs.so` on
the path as `afs.so`. Then run `python python/smoke_test.py`.
"""

import math
import random

import afs


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def check_losses():
    logits = [2.0, -1.0, 0.5]
    p = afs.softmax(logits)
    assert close(sum(p), 1.0)

    value, grad, pt = afs.ce_loss(logits, 0)
    assert close(value, -math.log(p[0]))
    assert close(pt, p[0])
    assert close(grad[0], p[0] - 1.0)

    value, _, _ = afs.focal_loss(logits, 0, alpha=1.0, gamma=0.0)
    assert close(value, -math.log(p[0]))

    value, _, _ = afs.rfl_loss(logits, 0, alpha=0.25, mu=0.3, sigma=0.5)
    weight = 0.25 * math.exp(-((p[0] - 0.3) ** 2) / 0.5)
    assert close(value, -weight * math.log(p[0]))
    assert close(afs.rfl_weight(p[0]), weight)

    teacher = afs.virtual_teacher(1, 3, 0.01)
    assert close(teacher[1], 0.99) and close(teacher[0], 0.005)

    cfg = afs.LossConfig(3)
    total, _, _ = afs.afs_loss(logits, 0, cfg)
    rfl, _, _ = afs.rfl_loss(logits, 0)
    vkd, _, _ = afs.vkd_loss(logits, 0)
    assert close(total, rfl + cfg.beta * vkd)

    assert afs.classify_difficulty(0.1) == "HSI"
    assert afs.classify_difficulty(0.5) == "ASI"
    assert afs.classify_difficulty(0.9) == "ESI"

    try:
        afs.ce_loss(logits, 5)
    except ValueError:
        pass
    else:
        raise AssertionError("out-of-range target accepted")


def blobs(rng, classes, per_class, dim):
    centers = [[rng.gauss(0, 1) for _ in range(dim)] for _ in range(classes)]
    xs, ys = [], []
    for c in range(classes):
        for _ in range(per_class):
            xs.append([m + 0.2 * rng.gauss(0, 1) for m in centers[c]])
            ys.append(c)
    return xs, ys


def check_network():
    rng = random.Random(0)
    xs, ys = blobs(rng, 3, 40, 6)
    net = afs.Network([6, 16, 3], seed=1)
    assert net.num_parameters == 6 * 16 + 16 + 16 * 3 + 3
    cfg = afs.LossConfig(3)
    order = list(range(len(xs)))
    for _ in range(30):
        rng.shuffle(order)
        for i in range(0, len(order), 10):
            idx = order[i:i + 10]
            net.train_step([xs[j] for j in idx], [ys[j] for j in idx], cfg, loss="ce", lr=0.1)
    acc = net.accuracy(xs, ys)
    assert acc > 0.9, acc

    restored = afs.Network.from_bytes(net.to_bytes())
    assert restored.parameters() == net.parameters()
    assert restored.forward(xs[0]) == net.forward(xs[0])


def check_memory():
    mem = afs.MemoryBuffer(50, seed=3)
    rng = random.Random(1)
    xs, ys = blobs(rng, 5, 40, 4)
    for i in range(0, len(xs), 10):
        mem.update(xs[i:i + 10], ys[i:i + 10])
    assert len(mem) == 50 and mem.seen == 200
    assert len(set(mem.ids())) == 50
    bx, by = mem.retrieve(20)
    assert len(bx) == len(by) == 20
    assert sum(n for _, n in mem.class_histogram()) == 50


def check_metrics():
    rows = [[0.9], [0.6, 0.8], [0.5, 0.7, 0.9]]
    assert close(afs.average_accuracy(rows), (0.5 + 0.7 + 0.9) / 3)
    assert close(afs.average_forgetting(rows), ((0.9 - 0.5) + (0.8 - 0.7)) / 2)
    mean, half = afs.confidence_interval([1.0, 1.0, 1.0])
    assert mean == 1.0 and half == 0.0


def check_experiment():
    text = "\n".join([
        "synthetic.classes = 4",
        "synthetic.dim = 8",
        "synthetic.train_per_class = 30",
        "synthetic.test_per_class = 10",
        "tasks = 2",
        "memory = 20",
        "hidden = 16",
        "runs = 2",
        "output = " + __import__("tempfile").mkdtemp(),
    ])
    method, finals = afs.run_experiment(text)
    assert method == "afs" and len(finals) == 2
    assert all(0.0 <= a <= 1.0 for a in finals)


def main():
    check_losses()
    check_network()
    check_memory()
    check_metrics()
    check_experiment()
    print("smoke test passed")


if __name__ == "__main__":
    main()
