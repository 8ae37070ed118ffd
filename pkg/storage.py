import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

RUNS_DB = "runs.db"


class RunStorage:
    def __init__(self, db_path: Union[str, Path] = RUNS_DB):
        """Index of finished pipeline runs kept in SQLite"""
        self.db_path = str(db_path)
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self.init_database()

    def init_database(self):
        """Create the runs table if it doesn't exist"""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id TEXT UNIQUE NOT NULL,
                    config_hash TEXT NOT NULL,
                    patch_size INTEGER NOT NULL,
                    repeat INTEGER NOT NULL DEFAULT 0,
                    output_dir TEXT NOT NULL,
                    overall_accuracy REAL,
                    average_accuracy REAL,
                    kappa REAL,
                    kappa_attacked REAL,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            ''')
            cursor.execute('''
                CREATE INDEX IF NOT EXISTS idx_config_hash ON runs(config_hash)
            ''')
            conn.commit()

    @staticmethod
    def make_run_id(config_hash: str, patch_size: int, repeat: int = 0) -> str:
        return f"{config_hash[:12]}-P{patch_size}-r{repeat}"

    def save_run(self, config_hash: str, patch_size: int, output_dir: Union[str, Path],
                 metrics: Dict[str, Optional[float]], repeat: int = 0) -> str:
        """Insert or refresh a run and return its id"""
        run_id = self.make_run_id(config_hash, patch_size, repeat)
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute('''
                INSERT OR REPLACE INTO runs (
                    run_id, config_hash, patch_size, repeat, output_dir,
                    overall_accuracy, average_accuracy, kappa, kappa_attacked, created_at
                ) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            ''', (
                run_id,
                config_hash,
                patch_size,
                repeat,
                str(output_dir),
                metrics.get('overall_accuracy'),
                metrics.get('average_accuracy'),
                metrics.get('kappa'),
                metrics.get('kappa_attacked'),
                datetime.now(),
            ))
            conn.commit()
        return run_id

    def get_run(self, run_id: str) -> Optional[Dict]:
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.cursor()
            cursor.execute('SELECT * FROM runs WHERE run_id = ?', (run_id,))
            row = cursor.fetchone()
            return dict(row) if row else None

    def get_runs(self, config_hash: Optional[str] = None, limit: int = 20) -> List[Dict]:
        """Most recent runs, optionally for one config"""
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.cursor()
            if config_hash:
                cursor.execute('''
                    SELECT * FROM runs
                    WHERE config_hash = ?
                    ORDER BY created_at DESC, id DESC
                    LIMIT ?
                ''', (config_hash, limit))
            else:
                cursor.execute('''
                    SELECT * FROM runs
                    ORDER BY created_at DESC, id DESC
                    LIMIT ?
                ''', (limit,))
            return [dict(row) for row in cursor.fetchall()]

    def delete_run(self, run_id: str) -> bool:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute('DELETE FROM runs WHERE run_id = ?', (run_id,))
            conn.commit()
            return cursor.rowcount > 0

    def get_stats(self) -> Dict:
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute('SELECT COUNT(*) FROM runs')
            total = cursor.fetchone()[0]
            cursor.execute('SELECT patch_size, COUNT(*) FROM runs GROUP BY patch_size')
            by_patch = dict(cursor.fetchall())
            cursor.execute('SELECT AVG(overall_accuracy), AVG(kappa) FROM runs')
            mean_oa, mean_kappa = cursor.fetchone()
            return {
                'total': total,
                'by_patch_size': by_patch,
                'mean_overall_accuracy': mean_oa,
                'mean_kappa': mean_kappa,
            }
