import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def record_criterion(request):
    """Callable ``record(number, title, passed, detail)`` for the acceptance summary."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, title, passed, detail):
        store[number] = (title, passed, detail)
        print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, passed, detail = store[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]")
    terminalreporter.write_line(f"{sum(v[1] for v in store.values())}/{len(store)} criteria passed")
