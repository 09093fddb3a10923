"""Figure rendering for the CLI report paths.

Every figure is written next to the delimited output it illustrates. The Agg
backend keeps rendering headless and deterministic.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = {"dpi": 120, "metadata": {"Software": None}}


def save_training_curves(log, path):
    """Train loss plus validation accuracy over episodes."""
    fig, ax1 = plt.subplots(figsize=(7, 4))
    episodes = [r["episode"] for r in log]
    ax1.plot(episodes, [r["train_loss"] for r in log], color="tab:blue", lw=1.0)
    ax1.set_xlabel("episode")
    ax1.set_ylabel("train loss", color="tab:blue")
    val = [(r["episode"], r["val_acc"]) for r in log if "val_acc" in r]
    if val:
        ax2 = ax1.twinx()
        ax2.plot(*zip(*val), color="tab:orange", marker="o", ms=3, lw=1.0)
        ax2.set_ylabel("val accuracy", color="tab:orange")
        ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_accuracy_hist(accs, path):
    """Histogram of per-episode accuracies from an evaluation run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(accs, bins=20, color="tab:blue", edgecolor="white")
    ax.axvline(float(sum(accs)) / len(accs), color="tab:red", ls="--", label="mean")
    ax.set_xlabel("episode accuracy")
    ax.set_ylabel("episodes")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_importance_bars(per_class, path, top_k):
    """Horizontal bars of the top-k concept scores for each class.

    ``per_class`` is a list of (class_name, concept_names, scores) with
    concept_names/scores already ranked best-first.
    """
    n = len(per_class)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2 + 1.2 * n * min(top_k, 10) / 5), squeeze=False)
    for ax, (cls, names, scores) in zip(axes[:, 0], per_class):
        names = names[:top_k]
        scores = scores[:top_k]
        ypos = range(len(names))[::-1]
        ax.barh(list(ypos), scores, color="tab:green")
        ax.set_yticks(list(ypos))
        ax.set_yticklabels(names, fontsize=8)
        ax.set_title(f"class {cls}", fontsize=9)
        ax.set_xlabel("importance score")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_sweep_curve(counts, means, cis, path):
    """Accuracy as a function of the number of concepts."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(counts, means, yerr=cis, marker="o", capsize=3, color="tab:blue")
    ax.set_xlabel("number of concepts")
    ax.set_ylabel("mean accuracy")
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
