"""Smoke test for the `iml` Python extension.

Uses an installed `iml` module if there is one, otherwise loads the library
built by `cargo build --release -p iml-py --features extension-module`.
"""

import importlib.util
import math
import pathlib
import sys


def load_iml():
    try:
        import iml

        return iml
    except ImportError:
        pass
    root = pathlib.Path(__file__).resolve().parent.parent
    for name in ("libiml.so", "libiml.dylib", "iml.dll"):
        lib = root / "target" / "release" / name
        if lib.exists():
            spec = importlib.util.spec_from_file_location("iml", lib)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("iml extension not found; build it with cargo first")


def main():
    iml = load_iml()

    cfg = iml.Config()
    assert cfg.tools[0] == "safe_read"
    assert cfg.alert_level(0.31) == "medium"
    try:
        iml.load_config('{"iml": {"w_t": 0.9}}')
    except ValueError as e:
        assert "weights" in str(e)
    else:
        raise AssertionError("invalid weights accepted")

    tau1 = [0.36, 0.36, 0.14, 0.06, 0.04, 0.04]
    tau2 = [0.16, 0.10, 0.32, 0.38, 0.04, 0.00]
    js = iml.js_divergence(tau1, tau2)
    assert math.isclose(js, 0.22441156978043353, abs_tol=1e-12), js
    assert iml.js_divergence(tau1, tau1) == 0.0

    mi, h = iml.mutual_information([True, False] * 50, [False] * 100)
    assert mi == 0.0 and math.isclose(h, 1.0)

    assert iml.check_event("safe_read", 1) == (False, [])
    violated, reasons = iml.check_event("forbidden_exec", 11)
    assert violated and len(reasons) == 2

    burnin = [("safe_read", 1), ("safe_query", 1)] * 25
    mon = iml.Monitor(burnin)
    assert mon.snapshot["burnin_count"] == 50
    assert mon.d_ema == 0.0
    for _ in range(60):
        report = mon.observe("risky_execute", 2)
    assert report["step"] == 59 and mon.observed == 60
    assert report["d_ema"] > 0.45 and report["alert"] == "high", report
    assert report["enforcement_violated"] is False
    mon.clear()
    assert mon.observed == 0 and mon.snapshot["burnin_count"] == 50

    try:
        iml.Monitor([("forbidden_exec", 1), ("safe_read", 1)])
    except ValueError:
        pass
    else:
        raise AssertionError("non-compliant burn-in accepted")

    run = iml.run_scenario("tool_drift", steps=300, seed=42)
    summary = run["summary"]
    assert len(run["records"]) == 300
    assert summary["enforcement_count"] == 0
    assert summary["d_final"] >= 0.15

    print("iml smoke test passed: tool_drift d_final %.4f" % summary["d_final"])


if __name__ == "__main__":
    main()
