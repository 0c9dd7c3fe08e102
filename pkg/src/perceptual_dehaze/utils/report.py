"""Report generation: CSV files, JSON dumps and rich tables."""

import csv
import math
from pathlib import Path

from rich.table import Table

from ..models.schemas import EvalReport, SweepRow, TrainHistory


def _fmt(value: float | None, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    if math.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def summary_line(report: EvalReport) -> str:
    """One-line aggregate of an evaluation report."""
    return (
        f"mean_psnr_db={_fmt(report.mean_psnr_db)} mean_ssim={_fmt(report.mean_ssim)} "
        f"hazy_psnr_db={_fmt(report.mean_hazy_psnr_db)} hazy_ssim={_fmt(report.mean_hazy_ssim)} "
        f"n={report.n_images} n_infinite_psnr={report.n_infinite_psnr} n_failed={report.n_failed} "
        f"eval_sigma={report.eval_sigma:g} eval_c1={report.eval_c1:g} eval_c2={report.eval_c2:g}"
    )


def save_eval_report(report: EvalReport, out_dir: Path) -> Path:
    """Save the evaluation report as CSV and JSON.

    The CSV holds `image_id,psnr_db,ssim` rows followed by a `# summary` line.

    Returns:
        Path to the CSV file
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "psnr_db", "ssim"])
        for r in report.records:
            writer.writerow([r.image_id, "inf" if math.isinf(r.psnr_db) else repr(r.psnr_db), repr(r.ssim)])
        f.write(f"# summary {summary_line(report)}\n")

    (out_dir / "report.json").write_text(report.model_dump_json(indent=2))
    return csv_path


def read_eval_csv(path: Path) -> list[tuple[str, float, float]]:
    """Read back the per-image rows of a report CSV."""
    rows = []
    with open(path, newline="") as f:
        for row in csv.reader(line for line in f if not line.startswith("#")):
            if row[0] == "image_id":
                continue
            rows.append((row[0], float(row[1]), float(row[2])))
    return rows


def write_history_csv(history: TrainHistory, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        for point in history.points:
            writer.writerow([point.iteration, repr(point.loss)])
    return path


def write_epochs_csv(history: TrainHistory, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "val_psnr_db", "val_ssim"])
        for e in history.epochs:
            writer.writerow([e.epoch, repr(e.train_loss), _fmt(e.val_psnr_db, 6), _fmt(e.val_ssim, 6)])
    return path


def write_sweep_csv(rows: list[SweepRow], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["alpha", "psnr_db", "ssim"])
        for row in rows:
            writer.writerow([repr(row.alpha), _fmt(row.psnr_db, 6), _fmt(row.ssim, 6)])
    return path


def eval_table(report: EvalReport) -> Table:
    """Aligned per-image table with a mean row."""
    table = Table(title="Evaluation")
    table.add_column("image_id")
    table.add_column("PSNR (dB)", justify="right")
    table.add_column("SSIM", justify="right")
    table.add_column("hazy PSNR", justify="right")
    table.add_column("hazy SSIM", justify="right")
    for r in report.records:
        table.add_row(r.image_id, _fmt(r.psnr_db, 2), _fmt(r.ssim), _fmt(r.hazy_psnr_db, 2), _fmt(r.hazy_ssim))
    table.add_section()
    table.add_row(
        "mean",
        _fmt(report.mean_psnr_db, 2),
        _fmt(report.mean_ssim),
        _fmt(report.mean_hazy_psnr_db, 2),
        _fmt(report.mean_hazy_ssim),
        style="bold",
    )
    return table


def sweep_table(rows: list[SweepRow]) -> Table:
    table = Table(title="Alpha sweep")
    table.add_column("alpha", justify="right")
    table.add_column("PSNR (dB)", justify="right")
    table.add_column("SSIM", justify="right")
    for row in rows:
        table.add_row(f"{row.alpha:g}", _fmt(row.psnr_db, 2), _fmt(row.ssim))
    return table
