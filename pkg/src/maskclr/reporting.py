"""Artifact writers: CSV/JSON outputs and the figures rendered beside them.

Every delimited file starts with `#`-prefixed provenance lines (format tag,
config hash, seed, checkpoint id) followed by a plain header row. Floats
are written with repr(), which round-trips float64 bit-exactly, so a file
read back yields the identical matrix — downstream consumers may rely on
that. Nothing here embeds timestamps; identical runs produce identical
bytes.

Figures are best-effort companions for human inspection: loss curves next
to the history CSV, a metric bar chart next to the metrics JSON, and the
3-D component scatter next to the projection CSV.
"""

import base64
import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError
from .evaluation import EmbeddingSet
from .train import HISTORY_COLUMNS

FORMAT_TAGS = {
    "history": "maskclr-history v1",
    "embeddings": "maskclr-embeddings v1",
    "projection": "maskclr-projection v1",
}

_BIN_MAGIC = b"MCLREMB1"


def _provenance_lines(tag, provenance):
    lines = [f"# {FORMAT_TAGS[tag]}\n"]
    for key in sorted(provenance or {}):
        lines.append(f"# {key}={provenance[key]}\n")
    return lines


# ---------------------------------------------------------------------------
# run history


def save_history_csv(history, path, provenance=None):
    with open(path, "w") as fh:
        fh.writelines(_provenance_lines("history", provenance))
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for r in history:
            fh.write(
                f"{r.step},{r.epoch},{r.contrastive_loss!r},{r.supervised_loss!r},"
                f"{r.mask_density!r},{r.degenerate_count}\n"
            )


def read_history_csv(path):
    from .train import StepRecord

    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#") or line.startswith(HISTORY_COLUMNS[0] + ","):
                continue
            step, epoch, closs, sloss, dens, degen = line.rstrip("\n").split(",")
            rows.append(
                StepRecord(int(step), int(epoch), float(closs), float(sloss), float(dens), int(degen))
            )
    return rows


def save_history_figure(history, path):
    steps = [r.step for r in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(steps, [r.contrastive_loss for r in history], label="contrastive", lw=1)
    ax1.plot(steps, [r.supervised_loss for r in history], label="supervised", lw=1)
    ax1.set_ylabel("loss")
    ax1.legend(frameon=False)
    ax2.plot(steps, [r.mask_density for r in history], color="tab:green", lw=1)
    ax2.set_ylabel("mask density")
    ax2.set_xlabel("step")
    ax2.set_ylim(-0.05, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# metrics


def save_metrics_json(report, path, provenance=None):
    payload = report.to_dict()
    if provenance:
        payload["provenance"] = dict(sorted(provenance.items()))
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def save_metrics_figure(report, path):
    names = ["NMI", "AMI", "ARI"]
    values = [report.nmi, report.ami, report.ari]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    bars = ax.bar(names, values, color=["tab:blue", "tab:orange", "tab:green"])
    for bar, v in zip(bars, values):
        ax.annotate(f"{v:.3f}", (bar.get_x() + bar.get_width() / 2, v), ha="center", va="bottom")
    ax.set_ylim(min(0.0, min(values)) - 0.05, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"clustering agreement (k={report.k}, n={report.n_samples})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# embeddings


def save_embeddings_csv(emb, path, provenance=None):
    d = emb.matrix.shape[1]
    with open(path, "w") as fh:
        fh.writelines(_provenance_lines("embeddings", provenance))
        fh.write("sample_id,label," + ",".join(f"f{i}" for i in range(d)) + "\n")
        for sid, label, row in zip(emb.ids, emb.labels, emb.matrix):
            lab = "" if label is None else str(int(label))
            fh.write(f"{sid},{lab}," + ",".join(repr(float(v)) for v in row) + "\n")


def read_embeddings_csv(path):
    ids, labels, rows = [], [], []
    meta = {}
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                stripped = line[1:].strip()
                if "=" in stripped:
                    k, _, v = stripped.partition("=")
                    meta[k.strip()] = v.strip()
                continue
            if line.startswith("sample_id,"):
                continue
            parts = line.rstrip("\n").split(",")
            ids.append(parts[0])
            labels.append(None if parts[1] == "" else int(parts[1]))
            rows.append([float(v) for v in parts[2:]])
    matrix = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    return EmbeddingSet(
        matrix=matrix,
        ids=ids,
        labels=labels,
        branch=meta.get("branch", "full"),
        checkpoint_id=meta.get("checkpoint_id", ""),
    )


def save_embeddings_bin(emb, path, provenance=None):
    header = {
        "n": int(emb.matrix.shape[0]),
        "d": int(emb.matrix.shape[1]),
        "ids": list(emb.ids),
        "labels": [None if l is None else int(l) for l in emb.labels],
        "branch": emb.branch,
        "checkpoint_id": emb.checkpoint_id,
        "provenance": dict(sorted((provenance or {}).items())),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(np.uint32(1).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        fh.write(np.ascontiguousarray(emb.matrix, dtype="<f8").tobytes())


def read_embeddings_bin(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _BIN_MAGIC:
            raise ConfigurationError(f"{path} is not a maskclr embeddings file")
        version = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        if version != 1:
            raise ConfigurationError(f"unsupported embeddings version {version}")
        hlen = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
        header = json.loads(fh.read(hlen).decode())
        matrix = np.frombuffer(fh.read(header["n"] * header["d"] * 8), dtype="<f8").copy()
    return EmbeddingSet(
        matrix=matrix.reshape(header["n"], header["d"]),
        ids=header["ids"],
        labels=header["labels"],
        branch=header.get("branch", "full"),
        checkpoint_id=header.get("checkpoint_id", ""),
    )


# ---------------------------------------------------------------------------
# mixture outputs


def save_outlier_report(report, path, provenance=None):
    payload = report.to_dict()
    if provenance:
        payload["provenance"] = dict(sorted(provenance.items()))
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)


def save_projection_csv(ids, projection, components, path, provenance=None):
    if projection.shape[1] != 3:
        raise ConfigurationError("projection CSV expects exactly 3 columns")
    with open(path, "w") as fh:
        fh.writelines(_provenance_lines("projection", provenance))
        fh.write("sample_id,x,y,z,component\n")
        for sid, row, comp in zip(ids, projection, components):
            fh.write(f"{sid},{row[0]!r},{row[1]!r},{row[2]!r},{int(comp)}\n")


def save_projection_figure(projection, components, outlier_component, path, dims=None):
    components = np.asarray(components)
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    palette = ["tab:green", "tab:red", "tab:purple", "tab:brown", "tab:olive", "tab:cyan"]
    for c in sorted(set(int(v) for v in components)):
        pts = projection[components == c]
        if c == outlier_component:
            ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=9, c="tab:blue",
                       label=f"outliers (component {c})")
        else:
            ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=6,
                       c=palette[c % len(palette)], alpha=0.6, label=f"component {c}")
    labels = dims if dims is not None else (0, 1, 2)
    ax.set_xlabel(f"f{labels[0]}")
    ax.set_ylabel(f"f{labels[1]}")
    ax.set_zlabel(f"f{labels[2]}")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
