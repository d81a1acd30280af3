"""Smoke test for the gridsa Python extension.

Build and install first:

    pip install --no-build-isolation -e crates/py

then run ``python python/smoke_test.py``.
"""

import json
import sys
import tempfile

import gridsa


def check(cond, msg):
    if not cond:
        print(f"FAIL {msg}")
        sys.exit(1)
    print(f"ok   {msg}")


def main():
    snap = gridsa.fixture("rocof_plus")
    check(snap.issues() == [], "fixture validates")
    again = gridsa.Snapshot.from_json(snap.to_json())
    check(again.timestamp == snap.timestamp, "snapshot JSON round trip")

    m = snap.metrics()
    check(abs(m["inertia_mws"] - 12000.0) < 1e-9, "inertia 12000 MWs")
    check(m["muon_count"] == 6, "six large units online")

    pf = snap.solve()
    check(pf["converged"] and pf["max_mismatch"] <= 1e-8, "power flow converges")

    resp = snap.simulate("hvdc:HVDC_X", {"t_end": 3.0})
    check(len(resp["time"]) > 100, "simulation returns a trace")

    cfg = gridsa.Config()
    cfg.workers = 1
    report = gridsa.assess(snap, cfg)
    check(report.status == "complete", "cycle completes")
    check([c for c, _ in report.insecure()] == ["hvdc:HVDC_X"], "HVDC export trip is insecure")
    check(report.insecure()[0][1] == ["RoCoF+"], "it binds RoCoF+")

    with tempfile.TemporaryDirectory() as root:
        archive = gridsa.Archive(root)
        stored = archive.run_cycle(snap, cfg)
        check(len(archive) == 1, "cycle persisted")
        check(stored.to_json(normalize=True) == report.to_json(normalize=True), "persisted report matches")
        fix = gridsa.what_if(
            {
                "base": {"timestamp": snap.timestamp},
                "modifications": [
                    {"action": "commit_machine", "machine": "GSPARE", "p_set": 300},
                    {"action": "set_ibr_output", "unit": "W1", "p": 0},
                    {"action": "set_ibr_output", "unit": "W2", "p": 0},
                ],
            },
            archive,
            cfg,
        )
        check(fix.totals["insecure"] == 0, "what-if clears the insecurity")
        check(len(gridsa.Archive(root)) == 1, "what-if leaves the archive alone")

    cfg.policy_profile = "2030"
    high = gridsa.assess(gridsa.fixture("high_snsp"), cfg)
    snsp = next(c for c in high.policy["constraints"] if c["constraint"] == "SNSP")
    check(snsp["compliant"] and snsp["limit"] == 95.0, "78 % SNSP compliant under 2030")

    planted = gridsa.Archive.planted(500, 8, 7)
    table = planted.summary()
    check(sum(r["total_binding_cases"] for r in table["rows"]) == table["totals"]["binding_sum"], "summary rows add up")
    r = planted.correlate("inertia", "rocof_plus")["r"]
    check(r < 0, f"RoCoF+ falls with inertia (r = {r:.3f})")
    csv = planted.scatter_csv("demand", "wind", "zenith")
    check("ts,x,y,insecure" in csv.splitlines()[:2], "scatter CSV header")
    try:
        planted.summary(start=0, end=1)
        check(False, "empty window raises")
    except gridsa.EmptyWindowError:
        check(True, "empty window raises")

    print(json.dumps({"version": gridsa.__version__, "checks": "passed"}))


if __name__ == "__main__":
    main()
