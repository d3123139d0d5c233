import numpy as np
import pytest

from inear_gait.dataio import load_manifest
from inear_gait.pipeline import build_dataset
from inear_gait.synth import gen_corpus


def sine(freq, duration, rate, amplitude=1.0, phase=0.0):
    t = np.arange(int(round(duration * rate))) / rate
    return amplitude * np.sin(2 * np.pi * freq * t + phase)


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 subjects, 2 short sessions each, written to disk once per run."""
    out = tmp_path_factory.mktemp("small_corpus")
    return gen_corpus(out, n_subjects=4, sessions_per_subject=2, seed=3, duration_s=30.0)


@pytest.fixture(scope="session")
def small_dataset(small_corpus):
    return build_dataset(load_manifest(small_corpus, resolve=True))


# Acceptance results, printed as one line per criterion at the end of the run.
ACCEPTANCE: list[str] = []


def record_criterion(number: int, title: str, status: str, detail: str) -> str:
    line = f"criterion {number:>2} {status:<4} {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
