import pytest

SMALL_INI = """
[experiment]
master_seed = 3
eval_queries = 20
judged_pairs = 300
sessions = 400
importance_sample = 100

[generate]
n_queries = 30
items_per_group = 10
segment.head = 0.5
segment.tail = 0.5

[train]
n_trees = 3
max_depth = 2
min_leaf_count = 5

[content_gbdt]
n_trees = 3
max_depth = 2

[scorer]
epochs = 50

[variant.Baseline]
content_source = gbdt
baseline = yes

[variant.LX]
content_source = scorer
xe_features = yes

[variant.sigma_c_LX]
content_source = scorer
xe_features = yes
transform = 12, 0.5
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_INI)
    return path


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
