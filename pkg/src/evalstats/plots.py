import logging
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from src.evalstats.schemas import EvaluationReport, SubgroupReport

logger = logging.getLogger(__name__)


def _plot_subgroup(sub: SubgroupReport, out_dir: Path) -> List[Path]:
    roc_fig, roc_ax = plt.subplots(figsize=(5, 5))
    pr_fig, pr_ax = plt.subplots(figsize=(5, 5))

    for name, metrics in sorted(sub.models.items()):
        roc_ax.plot(metrics.roc.x, metrics.roc.y, label=f"{name} (AUC {metrics.auc:.2f})")
        pr_ax.step(metrics.pr.x, metrics.pr.y, where="post", label=f"{name} (AP {metrics.ap:.2f})")

    # random classifier
    roc_ax.plot([0, 1], [0, 1], linestyle="--", color="black", linewidth=1)
    pr_ax.axhline(sub.prevalence, linestyle="--", color="black", linewidth=1)

    roc_ax.set(xlim=(0, 1), ylim=(0, 1.01), xlabel="1 - Specificity", ylabel="Sensitivity", title=f"ROC ({sub.name})")
    pr_ax.set(xlim=(0, 1), ylim=(0, 1.01), xlabel="Recall", ylabel="Precision", title=f"Precision-recall ({sub.name})")

    paths = []
    for kind, fig, ax in (("roc", roc_fig, roc_ax), ("pr", pr_fig, pr_ax)):
        ax.legend(loc="lower right" if kind == "roc" else "upper right", fontsize="small")
        ax.grid(alpha=0.3)
        path = out_dir / f"{kind}_{sub.name}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths


def plot_curves(report: EvaluationReport, out_dir: Path) -> List[Path]:
    """ROC and PR figures per subgroup, with dashed random-classifier baselines."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for sub in report.subgroups.values():
        paths.extend(_plot_subgroup(sub, out_dir))
    logger.info(f"Rendered {len(paths)} curve figures into {out_dir}")
    return paths
