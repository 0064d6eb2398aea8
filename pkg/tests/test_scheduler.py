import math
import random

import pytest

from mapbench.scheduler import (
    ClusterPlan,
    CostModel,
    InconsistentPlan,
    MissingSize,
    Task,
    classify,
    default_cost_model,
    network_transfers_of_resource_set,
    plan_cloud,
    plan_cluster,
    render_subtask_manifest,
    simulate,
    transfer_cost,
    write_subtask_manifest,
)


def make_tasks(n_algorithms=2, n_datasets=2, per_class=3):
    tasks = []
    for a in range(n_algorithms):
        for d in range(n_datasets):
            for k in range(per_class):
                tasks.append(
                    Task(f"t-{a}{d}{k}", f"alg-{a}", f"ds-{d}")
                )
    return tasks


class TestClassify:
    def test_two_by_two_gives_four_classes_of_three(self):
        classes = classify(make_tasks())
        assert len(classes) == 4
        assert all(len(c.task_ids) == 3 for c in classes)

    def test_single_pair_single_class(self):
        classes = classify(make_tasks(1, 1, 8))
        assert len(classes) == 1
        assert len(classes[0].task_ids) == 8

    def test_empty(self):
        assert classify([]) == []

    def test_every_task_in_exactly_one_class(self):
        tasks = make_tasks(3, 2, 4)
        classes = classify(tasks)
        seen = [tid for c in classes for tid in c.task_ids]
        assert sorted(seen) == sorted(t.task_id for t in tasks)


class TestPlanCluster:
    def test_controllers_min_m_n(self):
        plan = plan_cluster(make_tasks(2, 5, 1), m_nodes=20, seed=1)  # n=10 tasks
        assert len(plan.controllers) == 10
        plan2 = plan_cluster(make_tasks(2, 5, 1), m_nodes=3, seed=1)
        assert len(plan2.controllers) == 3

    def test_min_m_n_randomized(self):
        rng = random.Random(0)
        for _ in range(50):
            n = rng.randint(1, 40)
            m = rng.randint(1, 40)
            tasks = [Task(f"t{i}", f"a{i % 3}", f"d{i % 2}") for i in range(n)]
            plan = plan_cluster(tasks, m, seed=rng.randint(0, 999))
            assert len(plan.controllers) == min(m, n)

    def test_deterministic_under_seed(self):
        tasks = make_tasks(2, 2, 2)
        a = plan_cluster(tasks, 2, seed=42)
        b = plan_cluster(tasks, 2, seed=42)
        assert a == b
        c = plan_cluster(tasks, 2, seed=43)
        assert a.seed != c.seed

    def test_single_class_fetches_resources_once(self):
        tasks = make_tasks(1, 1, 8)
        plan = plan_cluster(tasks, 4, seed=7)
        node = plan.assignment[("alg-0", "ds-0")]
        assert plan.manifests[node] == tuple(t.task_id for t in tasks)
        assert sorted(plan.transfer_schedule) == sorted(
            [(node, "image:alg-0"), (node, "dataset:ds-0")]
        )

    def test_manifests_partition_tasks_randomized(self):
        rng = random.Random(9)
        for _ in range(1000):
            n_alg = rng.randint(1, 4)
            n_ds = rng.randint(1, 3)
            per_class = rng.randint(1, 4)
            m = rng.randint(1, 12)
            strategy = rng.choice(["random", "balanced"])
            tasks = make_tasks(n_alg, n_ds, per_class)
            plan = plan_cluster(tasks, m, seed=rng.randint(0, 10_000), strategy=strategy)
            all_ids = [tid for ids in plan.manifests.values() for tid in ids]
            assert sorted(all_ids) == sorted(t.task_id for t in tasks)
            assert len(all_ids) == len(set(all_ids))
            # class atomicity: all members of a class on exactly one node
            for cls in classify(tasks):
                nodes = {
                    node for node, ids in plan.manifests.items()
                    if set(cls.task_ids) & set(ids)
                }
                assert len(nodes) == 1
                assert nodes == {plan.assignment[cls.key]}

    def test_manifest_file(self, tmp_path):
        plan = plan_cluster(make_tasks(), 2, seed=0)
        path = write_subtask_manifest(plan, tmp_path)
        assert path.name == "subTask.txt"
        text = path.read_text()
        for node in plan.controllers:
            assert f"[{node}]" in text
        rendered = render_subtask_manifest(plan)
        assert rendered == text


class TestTransferCost:
    def test_one_class_one_node(self):
        plan = plan_cluster(make_tasks(1, 1, 4), 1, seed=0)
        model = CostModel(resource_sizes={"image:alg-0": 100, "dataset:ds-0": 1000})
        cost = transfer_cost(plan, model)
        assert cost.total_bytes == 1100
        assert cost.per_node["node-01"] == 1100

    def test_class_split_forced_double(self):
        # two classes sharing the dataset on two nodes: dataset moved twice
        tasks = [Task("t1", "alg-0", "ds-0"), Task("t2", "alg-1", "ds-0")]
        model = CostModel(resource_sizes={"image:alg-0": 7, "image:alg-1": 7,
                                          "dataset:ds-0": 100})
        for seed in range(50):
            plan = plan_cluster(tasks, 2, seed=seed)
            nodes = {plan.assignment[("alg-0", "ds-0")], plan.assignment[("alg-1", "ds-0")]}
            cost = transfer_cost(plan, model)
            if len(nodes) == 2:
                assert cost.total_bytes == 2 * 100 + 2 * 7
            else:
                assert cost.total_bytes == 100 + 2 * 7

    def test_missing_size(self):
        plan = plan_cluster(make_tasks(1, 1, 1), 1, seed=0)
        with pytest.raises(MissingSize):
            transfer_cost(plan, CostModel())

    def test_randomized_cost_matches_exhaustive_accounting(self):
        rng = random.Random(5)
        for _ in range(100):
            tasks = make_tasks(rng.randint(1, 4), rng.randint(1, 3), rng.randint(1, 3))
            plan = plan_cluster(tasks, rng.randint(1, 6), seed=rng.randint(0, 999))
            sizes = {}
            for t in tasks:
                sizes[f"image:{t.algorithm_id}"] = rng.randint(1, 100)
                sizes[f"dataset:{t.dataset_id}"] = rng.randint(100, 1000)
            model = CostModel(resource_sizes=sizes)
            cost = transfer_cost(plan, model)
            # oracle: unique (node, resource) pairs from the assignment itself
            needed = set()
            for cls in classify(tasks):
                node = plan.assignment[cls.key]
                needed.add((node, f"image:{cls.algorithm_id}"))
                needed.add((node, f"dataset:{cls.dataset_id}"))
            assert cost.total_bytes == sum(sizes[r] for _, r in needed)


class TestPlanCloud:
    def test_snapshot_five_nodes(self):
        plan = plan_cloud(5, "snapshot", default_cost_model())
        actions = [s.action for s in plan.steps]
        assert actions.count("transfer") == 1
        assert actions.count("snapshot") == 1
        assert actions.count("clone") == 4

    def test_direct_one_node(self):
        plan = plan_cloud(1, "direct", default_cost_model())
        assert [s.action for s in plan.steps] == ["transfer"]

    def test_snapshot_one_node_degenerates(self):
        plan = plan_cloud(1, "snapshot", default_cost_model())
        assert [s.action for s in plan.steps] == ["transfer"]

    def test_network_transfer_counts(self):
        for n in (1, 4, 16):
            direct = plan_cloud(n, "direct", default_cost_model())
            assert network_transfers_of_resource_set(direct) == n
            snapshot = plan_cloud(n, "snapshot", default_cost_model())
            assert network_transfers_of_resource_set(snapshot) == 1


def balanced_plan(n_nodes, tasks_per_node=3):
    # one class per node so work splits evenly
    tasks = []
    for a in range(n_nodes):
        for k in range(tasks_per_node):
            tasks.append(Task(f"t-{a}-{k}", f"alg-{a}", f"ds-{a}"))
    return plan_cluster(tasks, n_nodes, seed=0, strategy="balanced")


class TestSimulate:
    def test_single_node_sequential_makespan(self):
        tasks = [Task(f"t{i}", "alg-0", "ds-0") for i in range(3)]
        plan = plan_cluster(tasks, 1, seed=0)
        model = CostModel(
            resource_sizes={"image:alg-0": 0, "dataset:ds-0": 0},
            default_task_duration=10.0,
        )
        timeline = simulate(plan, None, model)
        assert timeline.makespan == pytest.approx(30.0)
        assert timeline.total_network_bytes == 0

    def test_two_nodes_strictly_faster_than_one(self):
        tasks = [Task(f"t{i}", f"alg-{i % 2}", f"ds-{i % 2}") for i in range(8)]
        sizes = {"image:alg-0": 0, "image:alg-1": 0, "dataset:ds-0": 0, "dataset:ds-1": 0}
        model = CostModel(resource_sizes=sizes, default_task_duration=10.0)
        one = simulate(plan_cluster(tasks, 1, seed=0, strategy="balanced"), None, model)
        two = simulate(plan_cluster(tasks, 2, seed=0, strategy="balanced"), None, model)
        assert two.makespan < one.makespan

    def test_conservation_of_busy_time(self):
        rng = random.Random(2)
        for _ in range(30):
            tasks = make_tasks(rng.randint(1, 3), rng.randint(1, 3), rng.randint(1, 4))
            durations = {t.task_id: rng.uniform(1, 50) for t in tasks}
            model = CostModel(
                resource_sizes={}, default_image_bytes=0, default_dataset_bytes=0,
                task_durations=durations,
            )
            plan = plan_cluster(tasks, rng.randint(1, 5), seed=rng.randint(0, 99))
            timeline = simulate(plan, None, model)
            busy_total = sum(
                end - start for ivs in timeline.busy.values() for start, end, _ in ivs
            )
            assert math.isclose(busy_total, sum(durations.values()), rel_tol=1e-9)

    def test_snapshot_beats_direct_at_16_nodes_closed_form(self):
        n = 16
        plan = balanced_plan(n)
        model = default_cost_model(default_task_duration=60.0)
        direct = simulate(plan, plan_cloud(n, "direct", model), model)
        snap = simulate(plan, plan_cloud(n, "snapshot", model), model)

        set_bytes = sum(
            model.resource_size(r) for r in
            {f"image:alg-{i}" for i in range(n)} | {f"dataset:ds-{i}" for i in range(n)}
        )
        set_seconds = set_bytes / model.lan_bandwidth
        work = 3 * 60.0
        expected_direct = n * set_seconds + work
        expected_snap = set_seconds + model.snapshot_create_s + model.clone_instantiate_s + work
        assert direct.makespan == pytest.approx(expected_direct)
        assert snap.makespan == pytest.approx(expected_snap)
        assert snap.makespan < direct.makespan
        assert direct.total_network_bytes == n * set_bytes
        assert snap.total_network_bytes == set_bytes

    def test_snapshot_beats_direct_from_four_nodes_default_model(self):
        model = default_cost_model(default_task_duration=60.0)
        for n in (4, 8, 16):
            plan = balanced_plan(n)
            direct = simulate(plan, plan_cloud(n, "direct", model), model)
            snap = simulate(plan, plan_cloud(n, "snapshot", model), model)
            assert snap.makespan < direct.makespan, f"n={n}"

    def test_prep_time_added_once_per_dataset(self):
        tasks = [Task("t1", "alg-0", "ds-0"), Task("t2", "alg-0", "ds-0")]
        plan = plan_cluster(tasks, 1, seed=0)
        model = CostModel(
            resource_sizes={"image:alg-0": 0, "dataset:ds-0": 1000},
            default_task_duration=10.0,
            prep_seconds_per_byte=0.01,
            lan_bandwidth=1e12,
        )
        timeline = simulate(plan, None, model)
        assert timeline.makespan == pytest.approx(1000 / 1e12 + 10.0 + 20.0)

    def test_inconsistent_plan(self):
        plan = balanced_plan(4)
        model = default_cost_model()
        with pytest.raises(InconsistentPlan):
            simulate(plan, plan_cloud(3, "snapshot", model), model)
