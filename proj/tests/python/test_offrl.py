import math

import pytest

import offrl


def chain_mdp(sigma=0.3, gamma=0.9):
    # state 0 loops with probability gamma*sigma, otherwise moves to the rewarding state 1
    return {
        "num_states": 3,
        "num_actions": 1,
        "gamma": gamma,
        "transitions": [
            [[gamma * sigma, gamma * (1 - sigma), 1 - gamma]],
            [[0.0, gamma, 1 - gamma]],
            [[0.0, 0.0, 1.0]],
        ],
        "rewards": [[0.0], [1.0], [0.0]],
        "initial_state": 0,
    }


def two_action_mdp():
    mdp = chain_mdp()
    mdp["num_actions"] = 2
    mdp["transitions"] = [
        [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1]],
        [[0.0, 0.9, 0.1], [0.0, 0.9, 0.1]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]],
    ]
    mdp["rewards"] = [[0.0, 0.2], [1.0, 1.0], [0.0, 0.0]]
    return mdp


def policy(rows):
    return {"num_states": len(rows), "num_actions": len(rows[0]), "probs": rows}


def uniform(states, actions):
    return policy([[1.0 / actions] * actions for _ in range(states)])


def test_exact_value_matches_occupancy():
    mdp = two_action_mdp()
    pi = uniform(3, 2)
    value = offrl.exact_value(mdp, pi)[0]
    occ = offrl.exact_occupancy(mdp, pi)
    total = sum(occ[s][a] * mdp["rewards"][s][a] for s in range(3) for a in range(2))
    assert value == pytest.approx(total, abs=1e-9)


def test_sampling_and_evaluation_agree_with_truth():
    mdp = two_action_mdp()
    behavior = uniform(3, 2)
    target = policy([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    paths = offrl.sample(mdp, behavior, 5000, seed=7)
    assert len(paths) == 5000
    assert paths == offrl.sample(mdp, behavior, 5000, seed=7)
    truth = offrl.exact_value(mdp, target)[0]
    mb = offrl.evaluate_model_based(paths, mdp, target)
    assert abs(mb - truth) < 0.3
    # with target == behavior every weight is one and IS is the mean return
    on_policy = offrl.evaluate_importance_sampling(paths, behavior, behavior)
    mean_return = sum(sum(r for _, _, r in p) for p in paths) / len(paths)
    assert on_policy == pytest.approx(mean_return)
    assert abs(on_policy - offrl.exact_value(mdp, behavior)[0]) < 0.3


def test_optimize_returns_deterministic_policy():
    mdp = two_action_mdp()
    paths = offrl.sample(mdp, uniform(3, 2), 3000, seed=1)
    policy, value = offrl.optimize(paths, mdp)
    assert all(sorted(row) == [0.0, 1.0] for row in policy["probs"])
    assert value > 0


def test_formula_values():
    assert offrl.lemma3_path_count(0.9, 0.5, 20, 0.1) == 267
    assert offrl.lemma4_path_count(50, 0.8, 0.1) == 80
    assert offrl.lemma2_threshold(3, 0.3, 0.1) == 4517
    assert offrl.df_mse_bound(0.95, 100) == pytest.approx(4.132e-4, rel=1e-3)
    assert offrl.single_path_sigma_hat(0.3) == pytest.approx(0.51599, abs=1e-5)


def test_path_bound_and_certificate():
    mdp = two_action_mdp()
    pi = uniform(3, 2)
    report = offrl.path_bound(mdp, pi, epsilon=1.0, delta=0.1)
    assert report["log_base"] == "e"
    assert report["required_paths"] > 1e6
    paths = offrl.sample(mdp, pi, 500, seed=3)
    cert = offrl.certificate(paths, mdp, pi, pi, delta=0.1)
    assert cert["num_paths"] == 500
    eps = cert["epsilon"]
    assert eps == "inf" or math.isfinite(eps)


def test_run_experiment():
    result = offrl.run_experiment({"schema_version": 1, "kind": "lemma3", "trials": 20, "seed": 1})
    assert result["passed"]
    assert result["summary"]["paths"] == 267
    assert result["csv"].startswith("# config_hash=" + result["config_hash"])


def test_errors_are_value_errors():
    bad = chain_mdp()
    bad["transitions"][0][0] = [0.5, 0.5, 0.5]
    with pytest.raises(offrl.InvalidModel):
        offrl.exact_value(bad, uniform(3, 1))
    with pytest.raises(ValueError):
        offrl.run_experiment({"schema_version": 1, "kind": "nope"})
    with pytest.raises(ValueError):
        offrl.evaluate_model_based([[(0, 5, 0.0)]], chain_mdp(), uniform(3, 1))
