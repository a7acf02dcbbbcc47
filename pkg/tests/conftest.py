import numpy as np

from videostory.corpus import Corpus, FeatureMatrix, TermMatrix, TermVocabulary


def corpus_from_arrays(Y, X, names=None):
    """Corpus with term matrix ``Y`` (M x N, binary) and features ``X`` (N x D) or a list of them."""
    Y = np.asarray(Y)
    M, N = Y.shape
    ids = [f"v{i:03d}" for i in range(N)]
    terms = tuple(names or (f"t{j:02d}" for j in range(M)))
    vocab = TermVocabulary(terms, tuple(int(c) for c in Y.sum(axis=1)))
    tm = TermMatrix(M, tuple(ids), tuple(np.flatnonzero(Y[:, i]) for i in range(N)))
    Xs = X if isinstance(X, list) else [X]
    return Corpus(vocab, tm, [FeatureMatrix(f"m{j}", x, ids) for j, x in enumerate(Xs)])


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Remember one acceptance line, print it, and fail the calling test if needed."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
