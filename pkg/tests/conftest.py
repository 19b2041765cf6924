import pytest
import torch

from xltransfer.embedding import train_skipgram
from xltransfer.pipeline.toydata import ToyLanguage, cipher_sentences, is_anchor, make_cipher_table

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def cipher_embeddings():
    """Skip-gram spaces for a 10k-sentence toy corpus and its ciphered copy.

    Returns ``(child, parent, gold, top)`` where ``gold`` maps child tokens to
    their parent originals and ``top`` holds the 500 most frequent child tokens.
    """
    lang = ToyLanguage(seed=0)
    parent_text = lang.monolingual(10000, seed=1)
    table = make_cipher_table(lang.src_words, 11)
    child_text = cipher_sentences(parent_text, table)
    parent = train_skipgram(parent_text, dim=64, epochs=5, seed=1)
    child = train_skipgram(child_text, dim=64, epochs=5, seed=2)
    gold = {v: k for k, v in table.items()}
    gold.update({t: t for t in child.tokens if is_anchor(t)})
    top = [t for t in child.tokens[4:] if t in gold][:500]
    return child, parent, gold, top


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = mark.args
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    item.config._criteria[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, detail = results[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
