"""
Report writers: text tables, CSV rows, columnar PR data and a PR plot.
"""
import csv
import io
import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from apps.core.exceptions import UnwritableOutputError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ('class', 'threshold', 'tp', 'fp', 'fn', 'precision', 'recall')


def format_text_report(report):
    names = report.class_table
    lines = []
    for class_id, curve in report.curves.items():
        threshold, f1 = report.best_f1[class_id]
        lines.append(f"Class {names.name_of(class_id)}")
        lines.append(f"  {'threshold':>9}  {'tp':>6}  {'fp':>6}  {'fn':>6}  {'precision':>9}  {'recall':>6}")
        for p in curve:
            lines.append(
                f"  {p.threshold:9.4f}  {p.tp:6d}  {p.fp:6d}  {p.fn:6d}  {p.precision:9.4f}  {p.recall:6.4f}"
            )
        lines.append(f"  AP {report.average_precisions[class_id]:.4f}  best F1 {f1:.4f} at {threshold:.4f}")
        lines.append('')
    lines.append(f"mAP {report.map:.4f}")
    if report.throughput is not None:
        t = report.throughput
        lines.append(f"area {t.area_km2:.4f} km2")
        lines.append(f"detector time {t.detector_seconds:.3f} s, wall time {t.wall_seconds:.3f} s")
        lines.append(f"rate {t.rate_km2_per_s:.4f} km2/s, overhead factor {t.overhead_factor:.3f}")
    return '\n'.join(lines) + '\n'


def format_csv_report(report):
    names = report.class_table
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for class_id, curve in report.curves.items():
        for p in curve:
            writer.writerow([names.name_of(class_id), repr(p.threshold), p.tp, p.fp, p.fn,
                             repr(p.precision), repr(p.recall)])
    writer.writerow(('class', 'AP'))
    for class_id, ap in report.average_precisions.items():
        writer.writerow([names.name_of(class_id), repr(ap)])
    writer.writerow(['ALL', repr(report.map)])
    return buffer.getvalue()


def _write(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding='utf-8')
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write {path}: {e}") from e
    return path


def write_text_report(report, path):
    return _write(path, format_text_report(report))


def write_csv_report(report, path):
    return _write(path, format_csv_report(report))


def write_pr_data(report, out_dir):
    """One ``<class>.dat`` per class: threshold, recall, precision columns"""
    out_dir = Path(out_dir)
    paths = []
    for class_id, curve in report.curves.items():
        rows = ['# threshold recall precision']
        rows.extend(f"{p.threshold:.6f} {p.recall:.6f} {p.precision:.6f}" for p in curve)
        paths.append(_write(out_dir / f"{report.class_table.name_of(class_id)}.dat", '\n'.join(rows) + '\n'))
    return paths


def plot_pr_curves(report, path):
    path = Path(path)
    figure, axis = plt.subplots(figsize=(6, 5))
    try:
        for class_id, curve in report.curves.items():
            points = sorted(curve, key=lambda p: p.recall)
            label = f"{report.class_table.name_of(class_id)} (AP {report.average_precisions[class_id]:.2f})"
            axis.plot([p.recall for p in points], [p.precision for p in points], marker='.', label=label)
        axis.set_xlabel('Recall')
        axis.set_ylabel('Precision')
        axis.set_xlim(0.0, 1.02)
        axis.set_ylim(0.0, 1.02)
        axis.set_title(f"mAP {report.map:.3f}")
        axis.legend(loc='lower left')
        path.parent.mkdir(parents=True, exist_ok=True)
        figure.savefig(path, dpi=100)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write plot {path}: {e}") from e
    finally:
        plt.close(figure)
    logger.info(f"Wrote PR curves to {path}")
    return path
