from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import pandas as pd

from metrics import ClassReport

SUMMARY_ROWS = ("OA", "AA", "Kappa")


def format_percent(value: Optional[float]) -> str:
    """0.8 -> "80.00"; missing values render as "n/a" """
    if value is None:
        return "n/a"
    return f"{100.0 * value:.2f}"


def patch_column(patch_size: int) -> str:
    return f"P{patch_size}"


def class_report_frame(report: ClassReport) -> pd.DataFrame:
    rows = [(name, format_percent(acc), str(support))
            for name, acc, support in zip(report.class_names, report.accuracies, report.support)]
    rows += [
        ("OA", format_percent(report.overall_accuracy), str(sum(report.support))),
        ("AA", format_percent(report.average_accuracy), ""),
        ("Kappa", format_percent(report.kappa), ""),
    ]
    return pd.DataFrame(rows, columns=["Class", "Accuracy (%)", "Samples"]).set_index("Class")


def sweep_frame(reports: Mapping[int, ClassReport]) -> pd.DataFrame:
    """Classes as rows, one P<k> column per patch size, OA and Kappa summary rows"""
    if not reports:
        raise ValueError("A sweep table needs at least one patch size")
    sizes = sorted(reports)
    names = reports[sizes[0]].class_names
    table: Dict[str, List[str]] = {}
    for size in sizes:
        report = reports[size]
        if report.class_names != names:
            raise ValueError(f"P{size} was evaluated on different classes")
        table[patch_column(size)] = [format_percent(a) for a in report.accuracies] + [
            format_percent(report.overall_accuracy),
            format_percent(report.kappa),
        ]
    return pd.DataFrame(table, index=pd.Index(list(names) + ["OA", "Kappa"], name="Class"))


def kappa_frame(rows: Mapping[str, Mapping[int, float]]) -> pd.DataFrame:
    """One row per label (e.g. attacked, clean), one P<k> column per patch size"""
    sizes = sorted({size for row in rows.values() for size in row})
    table = {patch_column(size): [format_percent(row.get(size)) for row in rows.values()] for size in sizes}
    return pd.DataFrame(table, index=pd.Index(list(rows), name="Metric"))


def to_markdown(frame: pd.DataFrame) -> str:
    """Pipe table with every column padded to its widest cell"""
    header = [frame.index.name or ""] + [str(c) for c in frame.columns]
    body = [[str(index)] + [str(v) for v in row] for index, row in zip(frame.index, frame.itertuples(index=False))]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]

    def line(cells: List[str]) -> str:
        padded = [cells[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "| " + " | ".join(padded) + " |"

    rule = "|" + "|".join(["-" * (widths[0] + 2)] + ["-" * (w + 1) + ":" for w in widths[1:]]) + "|"
    return "\n".join([line(header), rule] + [line(r) for r in body]) + "\n"


def format_class_report(report: ClassReport, title: str = "Classification report") -> str:
    return f"""
**{title}**

{to_markdown(class_report_frame(report))}
**OA:** {format_percent(report.overall_accuracy)}  **AA:** {format_percent(report.average_accuracy)}  **Kappa:** {format_percent(report.kappa)}
""".strip() + "\n"


def write_table(frame: pd.DataFrame, stem: Union[str, Path]) -> Dict[str, Path]:
    """Writes <stem>.csv and <stem>.md"""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    md_path = stem.with_suffix(".md")
    frame.to_csv(csv_path)
    md_path.write_text(to_markdown(frame))
    return {"csv": csv_path, "markdown": md_path}
