import numpy as np
import pytest

from lexidate.dataset import Dataset, bundled_path, load_csv


@pytest.fixture(scope="session")
def separable() -> Dataset:
    return load_csv(bundled_path("separable"), "class")


@pytest.fixture(scope="session")
def iris() -> Dataset:
    return load_csv(bundled_path("iris"), "class")


def make_dataset(counts, n_features=3, seed=0, name="synthetic") -> Dataset:
    """Gaussian features, labels ``c0, c1, ...`` with the given class counts,
    rows shuffled."""
    rng = np.random.default_rng(seed)
    labels = np.concatenate([[f"c{i}"] * n for i, n in enumerate(counts)])
    rng.shuffle(labels)
    X = rng.normal(size=(len(labels), n_features))
    return Dataset.from_arrays(X, labels, name)


def stratification_violations(ds: Dataset, part: np.ndarray) -> list[tuple[str, float]]:
    """Classes c with |count(c, part) - |part| * freq(c)| > 1."""
    bad = []
    labels = ds.labels[part]
    for c in ds.classes:
        freq = np.mean(ds.labels == c)
        dev = abs(np.sum(labels == c) - len(part) * freq)
        if dev > 1 + 1e-9:
            bad.append((c, dev))
    return bad


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance check, whatever the verbosity."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome == "passed":
                continue
            props = dict(getattr(rep, "user_properties", ()))
            if "acceptance" in props:
                lines.append((props["acceptance"], "PASS" if outcome == "passed" else "FAIL", props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance")
        for title, verdict, detail in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {title}" + (f"  [{detail}]" if detail else ""))
