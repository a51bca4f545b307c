"""Smoke test for the readmit Python module."""

import csv
import os
import random
import sys
import tempfile

import readmit

WORKED = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "tests", "fixtures", "worked")


def worked(name):
    return os.path.join(WORKED, name)


def main():
    assert round(readmit.readmission_rate(40358, 1880), 2) == 4.66
    assert readmit.roc_auc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]) == 0.75

    admissions = readmit.build_admissions(worked("medical_claims.csv"))
    assert [a["readmitted"] for a in admissions] == [True, False, False], admissions

    columns, rows, labels, ids = readmit.feature_matrix(
        worked("medical_claims.csv"), worked("pharmacy_claims.csv"), worked("demographics.csv")
    )
    assert len(rows) == 3 and len(rows[0]) == len(columns)
    assert labels == [True, False, False]
    assert ids[1] == ("User1", "A2")

    rng = random.Random(3)
    x = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(300)]
    y = [r[0] + 0.5 * rng.gauss(0, 1) > 0 for r in x]

    lr = readmit.LogisticRegression.fit(x, y)
    assert lr.converged and lr.weights[0] > 1.0
    assert readmit.roc_auc(lr.predict_proba(x), y) > 0.85
    assert readmit.select_features(x, y)[0] == 0

    pca = readmit.Pca.fit(x, 0.95)
    assert len(pca.transform(x)[0]) == pca.n_components

    rf = readmit.RandomForest.fit(x, y, ntree=30, mtry=2, nodesize=3, seed=1)
    assert max(range(4), key=lambda i: rf.importances[i]) == 0
    assert abs(sum(rf.importances) - 1.0) < 1e-9

    svm = readmit.LinearSvm.fit(x, y, c=1.0, epochs=5)
    assert readmit.roc_auc(svm.decision_function(x), y) > 0.85

    with tempfile.TemporaryDirectory() as tmp:
        summary = readmit.generate(tmp, n_users=50, seed=4, signals=[("comorbidity:CHF", 2.0)])
        assert summary["users"] == 50 and summary["admissions"] > 0
        with open(os.path.join(tmp, "demographics.csv")) as f:
            assert sum(1 for _ in csv.reader(f)) == 51

        config = os.path.join(tmp, "run.toml")
        with open(config, "w") as f:
            f.write(
                "[generator]\nn_users = 60\nreadmission_fraction = 0.15\n"
                "[train]\nfolds = 2\n[train.forest_grid]\nntree = [10]\nmtry = [5]\nnodesize = [3]\nmaxnodes = [20]\n"
                "[train.svm_grid]\nc = [1.0]\nepochs = 3\n"
            )
        out = os.path.join(tmp, "out")
        readmit.run("all", config=config, out=out, seed=2)
        with open(os.path.join(out, "report", "report.csv")) as f:
            assert len(f.read().splitlines()) == 7
        try:
            readmit.run("features", out=os.path.join(tmp, "empty"))
        except RuntimeError as e:
            assert str(e).startswith("exit 3"), e
        else:
            raise AssertionError("missing inputs should fail")

    print(f"readmit {readmit.__version__}: smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
