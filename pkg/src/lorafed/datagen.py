"""Synthetic heterogeneous classification tasks and base-net pretraining.

Each benchmark draws class-conditional Gaussian features and pushes them
through a shared random orthogonal transform followed by a per-task
transform. The heterogeneity knob in [0, 1] blends the per-task
transform between the identity (0: all tasks identically distributed)
and a full random orthogonal map plus per-task class-mean shifts (1:
strongly non-IID). Labels are balanced within +/-1 sample per split and
train/test draws are disjoint by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from lorafed import linalg
from lorafed.linalg import Matrix, Vector
from lorafed.model import (
    TaskBatch,
    ToyNet,
    base_gradients,
    build_net,
    evaluate,
    sgd_step_base,
)
from lorafed.rng import SplitMix64, derive_seed

MEAN_SCALE = 1.0  # spread of the shared class means
SHIFT_SCALE = 1.5  # per-task class-mean shift at heterogeneity 1


@dataclass
class TaskSpec:
    task_id: int
    num_classes: int
    shared_transform: Matrix  # d x d, identical across tasks
    task_transform: Matrix  # d x d, identity at heterogeneity 0
    class_shifts: Matrix  # num_classes x d, already scaled by heterogeneity
    noise_std: float
    train_size: int
    test_size: int


@dataclass
class TaskData:
    spec: TaskSpec
    train: TaskBatch
    test: TaskBatch


@dataclass
class ClientSplit:
    client_id: int
    task_id: int
    train: TaskBatch


@dataclass
class Benchmark:
    tasks: list[TaskData]
    clients: list[ClientSplit]
    global_test: TaskBatch  # union of the per-task test splits
    class_means: Matrix  # num_classes x d, shared
    seed: int
    heterogeneity: float
    d_in: int
    num_classes: int


def random_orthogonal(d: int, seed: int) -> Matrix:
    """Orthogonal matrix from modified Gram-Schmidt on a Gaussian draw."""
    g = linalg.seeded_gaussian(d, d, 0.0, 1.0, seed)
    cols = [g.column(j) for j in range(d)]
    ortho: list[list[float]] = []
    for v in cols:
        w = list(v)
        for u in ortho:
            proj = sum(a * b for a, b in zip(u, w))
            w = [a - proj * b for a, b in zip(w, u)]
        norm = math.sqrt(sum(a * a for a in w))
        if norm < 1e-8:
            raise ValueError("degenerate Gaussian draw during orthogonalization")
        ortho.append([a / norm for a in w])
    # ortho holds orthonormal columns; build the matrix column-wise
    m = Matrix(d, d)
    for j, col in enumerate(ortho):
        for i in range(d):
            m.data[i * d + j] = col[i]
    return m


def _balanced_labels(n: int, classes: int, rng: SplitMix64) -> list[int]:
    base, extra = divmod(n, classes)
    labels = []
    for c in range(classes):
        labels.extend([c] * (base + (1 if c < extra else 0)))
    rng.shuffle(labels)
    return labels


def _sample_split(
    spec: TaskSpec, class_means: Matrix, n: int, rng: SplitMix64
) -> TaskBatch:
    d = spec.shared_transform.rows
    labels = _balanced_labels(n, spec.num_classes, rng)
    raw = Matrix(n, d)
    for i, c in enumerate(labels):
        for j in range(d):
            raw.data[i * d + j] = (
                class_means.at(c, j)
                + spec.class_shifts.at(c, j)
                + rng.gauss(0.0, spec.noise_std)
            )
    # row vectors: x = task_transform @ shared_transform @ v
    mix = linalg.transpose(linalg.matmul(spec.task_transform, spec.shared_transform))
    return TaskBatch(linalg.matmul(raw, mix), labels)


def gen_benchmark(
    num_tasks: int,
    d_in: int,
    classes: int,
    clients_per_task: int,
    heterogeneity: float,
    seed: int,
    train_per_task: int = 512,
    test_per_task: int = 128,
    noise_std: float = 3.0,
) -> Benchmark:
    """Deterministic benchmark; identical arguments give identical bytes."""
    if num_tasks < 2:
        raise ValueError(f"need at least 2 tasks, got {num_tasks}")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ValueError(f"heterogeneity must be in [0, 1], got {heterogeneity}")
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if clients_per_task < 1:
        raise ValueError("need at least one client per task")
    if train_per_task < clients_per_task:
        raise ValueError("fewer training samples than clients in a task")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")

    class_means = linalg.seeded_gaussian(
        classes, d_in, 0.0, MEAN_SCALE, derive_seed(seed, "class-means")
    )
    shared = random_orthogonal(d_in, derive_seed(seed, "shared-transform"))
    ident = linalg.identity(d_in)

    tasks = []
    for t in range(num_tasks):
        rot = random_orthogonal(d_in, derive_seed(seed, "task-rotation", t))
        # blend identity -> random orthogonal by the heterogeneity knob
        task_transform = linalg.add(
            linalg.scale(ident, 1.0 - heterogeneity), linalg.scale(rot, heterogeneity)
        )
        shifts = linalg.scale(
            linalg.seeded_gaussian(
                classes, d_in, 0.0, SHIFT_SCALE, derive_seed(seed, "task-shift", t)
            ),
            heterogeneity,
        )
        spec = TaskSpec(
            task_id=t,
            num_classes=classes,
            shared_transform=shared,
            task_transform=task_transform,
            class_shifts=shifts,
            noise_std=noise_std,
            train_size=train_per_task,
            test_size=test_per_task,
        )
        train = _sample_split(
            spec, class_means, train_per_task, SplitMix64(derive_seed(seed, "train", t))
        )
        test = _sample_split(
            spec, class_means, test_per_task, SplitMix64(derive_seed(seed, "test", t))
        )
        tasks.append(TaskData(spec=spec, train=train, test=test))

    clients = []
    for t, td in enumerate(tasks):
        for j in range(clients_per_task):
            # round-robin shard: client j takes rows j, j+k, j+2k, ...
            idx = list(range(j, td.train.size, clients_per_task))
            clients.append(
                ClientSplit(
                    client_id=t * clients_per_task + j,
                    task_id=t,
                    train=td.train.take(idx),
                )
            )

    global_test = concat_batches([td.test for td in tasks])
    return Benchmark(
        tasks=tasks,
        clients=clients,
        global_test=global_test,
        class_means=class_means,
        seed=seed,
        heterogeneity=heterogeneity,
        d_in=d_in,
        num_classes=classes,
    )


def concat_batches(batches: list[TaskBatch]) -> TaskBatch:
    rows: list[list[float]] = []
    labels: list[int] = []
    for b in batches:
        rows.extend(b.x.to_rows())
        labels.extend(b.y)
    return TaskBatch(Matrix.from_rows(rows), labels)


def train_base(
    net: ToyNet,
    batch: TaskBatch,
    epochs: int,
    lr: float,
    batch_size: int,
    rng: SplitMix64,
) -> tuple[ToyNet, list[float]]:
    """Full-parameter mini-batch SGD; returns (net, per-epoch mean loss)."""
    history = []
    for _ in range(epochs):
        order = rng.permutation(batch.size)
        total = 0.0
        for start in range(0, batch.size, batch_size):
            mini = batch.take(order[start : start + batch_size])
            grads = base_gradients(net, mini)
            net = sgd_step_base(net, grads, lr)
            loss, _ = evaluate(net, mini)
            total += loss * mini.size
        history.append(total / batch.size)
    return net, history


def pretrain_base(
    benchmark: Benchmark,
    hidden: list[int],
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 64,
) -> tuple[ToyNet, dict]:
    """Train the frozen base on the pooled all-task training data.

    epochs = 0 leaves the random init in place (the pipeline must still
    run on an untrained base).
    """
    dims = [benchmark.d_in] + list(hidden) + [benchmark.num_classes]
    net = build_net(dims, derive_seed(seed, "pretrain-init"))
    pool = concat_batches([td.train for td in benchmark.tasks])
    net, history = train_base(
        net, pool, epochs, lr, batch_size, SplitMix64(derive_seed(seed, "pretrain-sgd"))
    )
    loss, acc = evaluate(net, benchmark.global_test)
    info = {
        "epochs": epochs,
        "train_loss_history": history,
        "test_loss": loss,
        "test_acc": acc,
    }
    return net, info


def save_benchmark(path, benchmark: Benchmark, clients_per_task: int) -> None:
    """Export to the dataset container for exact rerun elsewhere."""
    from lorafed import containers

    meta = {
        "seed": benchmark.seed,
        "heterogeneity": benchmark.heterogeneity,
        "d_in": benchmark.d_in,
        "classes": benchmark.num_classes,
        "num_tasks": len(benchmark.tasks),
        "clients_per_task": clients_per_task,
        "noise_std": benchmark.tasks[0].spec.noise_std,
        "train_size": benchmark.tasks[0].spec.train_size,
        "test_size": benchmark.tasks[0].spec.test_size,
        "labels": {
            f"task{t}": {"train": td.train.y, "test": td.test.y}
            for t, td in enumerate(benchmark.tasks)
        },
    }
    tensors: list = [("class_means", benchmark.class_means)]
    tensors.append(("shared_transform", benchmark.tasks[0].spec.shared_transform))
    for t, td in enumerate(benchmark.tasks):
        tensors.append((f"task{t}.transform", td.spec.task_transform))
        tensors.append((f"task{t}.shifts", td.spec.class_shifts))
        tensors.append((f"task{t}.train_x", td.train.x))
        tensors.append((f"task{t}.test_x", td.test.x))
    containers.write_container(path, "benchmark", meta, tensors)


def load_benchmark(path) -> Benchmark:
    """Inverse of :func:`save_benchmark`; bit-exact round-trip."""
    from lorafed import containers

    c = containers.read_container(path)
    if c.kind != "benchmark":
        raise containers.ContainerError(f"{path}: expected a benchmark container")
    meta = c.meta
    shared = c.tensors["shared_transform"]
    tasks = []
    for t in range(meta["num_tasks"]):
        labels = meta["labels"][f"task{t}"]
        spec = TaskSpec(
            task_id=t,
            num_classes=meta["classes"],
            shared_transform=shared,
            task_transform=c.tensors[f"task{t}.transform"],
            class_shifts=c.tensors[f"task{t}.shifts"],
            noise_std=meta["noise_std"],
            train_size=meta["train_size"],
            test_size=meta["test_size"],
        )
        tasks.append(
            TaskData(
                spec=spec,
                train=TaskBatch(c.tensors[f"task{t}.train_x"], list(labels["train"])),
                test=TaskBatch(c.tensors[f"task{t}.test_x"], list(labels["test"])),
            )
        )
    cpt = meta["clients_per_task"]
    clients = []
    for t, td in enumerate(tasks):
        for j in range(cpt):
            idx = list(range(j, td.train.size, cpt))
            clients.append(
                ClientSplit(client_id=t * cpt + j, task_id=t, train=td.train.take(idx))
            )
    return Benchmark(
        tasks=tasks,
        clients=clients,
        global_test=concat_batches([td.test for td in tasks]),
        class_means=c.tensors["class_means"],
        seed=meta["seed"],
        heterogeneity=meta["heterogeneity"],
        d_in=meta["d_in"],
        num_classes=meta["classes"],
    )


def train_probe(
    train: TaskBatch, classes: int, epochs: int, lr: float, seed: int
) -> ToyNet:
    """Single-layer softmax probe, used to measure cross-task transfer."""
    net = build_net([train.x.cols, classes], derive_seed(seed, "probe-init"))
    net, _ = train_base(
        net, train, epochs, lr, 64, SplitMix64(derive_seed(seed, "probe-sgd"))
    )
    return net


def probe_transfer_accuracy(
    benchmark: Benchmark, epochs: int = 20, lr: float = 0.1, seed: int = 0
) -> float:
    """Mean accuracy of task-i probes evaluated on task-j test sets (i != j)."""
    probes = [
        train_probe(td.train, benchmark.num_classes, epochs, lr, seed + td.spec.task_id)
        for td in benchmark.tasks
    ]
    scores = []
    for i, probe in enumerate(probes):
        for j, td in enumerate(benchmark.tasks):
            if i != j:
                _, acc = evaluate(probe, td.test)
                scores.append(acc)
    return sum(scores) / len(scores)
