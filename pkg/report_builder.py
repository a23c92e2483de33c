from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd

from dataset_io import read_any_table, read_header

logger = logging.getLogger(__name__)


class ReportBuilder:

    """Collects the tabular artifacts of one output directory into a single Excel workbook."""

    SWEEPS = {
        "noise_sweep.csv": "Noise sweep",
        "sampling_sweep.csv": "Sampling sweep",
        "guide_length_sweep.csv": "Guide length",
        "anticorrelation.csv": "Anticorrelation",
    }

    def __init__(self, directory: Union[str, Path], top_trials: int = 10):
        self.directory = Path(directory)
        self.top_trials = top_trials

    # === helpers ===

    @staticmethod
    def _round(df: pd.DataFrame, digits: int = 6) -> pd.DataFrame:
        out = df.copy()
        numeric = out.select_dtypes("number").columns
        out[numeric] = out[numeric].round(digits)
        return out

    def _table(self, *parts: str) -> Optional[pd.DataFrame]:
        path = self.directory.joinpath(*parts)
        if not path.exists():
            return None
        return read_any_table(path)

    def build_run_sheet(self) -> pd.DataFrame:
        rows = []
        for path in sorted(self.directory.rglob("*.csv")):
            header = read_header(path)
            rows.append({
                "artifact": str(path.relative_to(self.directory)),
                "experiment_id": header.get("experiment_id", ""),
                "config_digest": header.get("config_digest", ""),
                "master_seed": header.get("master_seed", ""),
                "accuracy": header.get("accuracy"),
                "undecided_true": header.get("undecided_true"),
            })
        return pd.DataFrame(rows, columns=["artifact", "experiment_id", "config_digest", "master_seed",
                                           "accuracy", "undecided_true"])

    def build_search_sheet(self) -> Optional[pd.DataFrame]:
        log = self._table("search", "trial_log.csv")
        if log is None:
            return None
        return log.sort_values(["delta_e", "candidate_id"]).head(self.top_trials).reset_index(drop=True)

    def sheets(self) -> Dict[str, pd.DataFrame]:
        out: Dict[str, pd.DataFrame] = {}
        run = self.build_run_sheet()
        if run.empty:
            raise ValueError(f"No artifacts found under {self.directory}")
        out["Run"] = run
        accuracy = self._table("basin", "accuracy.csv")
        if accuracy is not None:
            out["Basin accuracy"] = accuracy
        machines = self._table("machines", "train_report.csv")
        if machines is not None:
            out["Machines"] = machines
        best = self.build_search_sheet()
        if best is not None:
            out["Search best"] = best
        for name, sheet in self.SWEEPS.items():
            table = self._table("sweeps", name)
            if table is not None:
                out[sheet] = table
        return out

    def write(self, path: Union[str, Path]) -> Path:
        """Export every sheet; numbers rounded to 6 digits for reading, the CSVs stay exact."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        sheets = self.sheets()
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            for name, df in sheets.items():
                self._round(df).to_excel(writer, index=False, sheet_name=name)
                ws = writer.sheets[name]
                for idx, col in enumerate(df.columns, start=1):
                    width = max(len(str(col)), *(len(str(v)) for v in df[col].head(50))) if len(df) else len(str(col))
                    ws.column_dimensions[ws.cell(row=1, column=idx).column_letter].width = min(width + 2, 60)
        logger.info("Report written to %s (%s)", path, ", ".join(sheets))
        return path

    def sheet_names(self) -> List[str]:
        return list(self.sheets())
