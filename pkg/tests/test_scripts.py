import subprocess
import sys
from pathlib import Path

import pytest

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


@pytest.mark.parametrize("name,args", [
    ("roundtrip_convergence.py", ["--z", "20", "40"]),
    ("interacting_ladder.py", ["--z", "50"]),
    ("bound_checks.py", ["--stencil-trials", "5", "--unitary-trials", "4"]),
])
def test_script_runs(name, args):
    out = subprocess.run([sys.executable, str(SCRIPTS / name), *args], capture_output=True, text=True,
                         timeout=120)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip()
