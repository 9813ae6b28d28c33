from ssk_edge.verify import run_verify


def test_verify_suite_passes_quickly():
    rep = run_verify(seed=0)
    failed = [(name, info) for name, ok, info in rep.results if not ok]
    assert not failed, failed
    assert rep.seconds < 60
