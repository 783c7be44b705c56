import yaml

from chart_sentry.manifest import parse_manifests
from chart_sentry.policies import (
    AnalyzerConfig,
    BUILTIN_POLICIES,
    run_builtin_analyzer,
)


def analyze(text, **kwargs):
    return run_builtin_analyzer(parse_manifests(text), **kwargs)


def ids(findings):
    return [f.policy.policy_id for f in findings]


def dump_docs(*trees):
    return "".join("---\n" + yaml.safe_dump(t, sort_keys=False) for t in trees)


def pod(name="p", namespace="apps", containers=None, volumes=None, labels=None):
    spec = {"containers": containers or []}
    if volumes is not None:
        spec["volumes"] = volumes
    meta = {"name": name, "namespace": namespace}
    if labels:
        meta["labels"] = labels
    return {"apiVersion": "v1", "kind": "Pod", "metadata": meta, "spec": spec}


def container(name="c", **overrides):
    base = {
        "name": name,
        "image": "app:1.0.0",
        "securityContext": {"allowPrivilegeEscalation": False},
        "resources": {
            "requests": {"cpu": "100m", "memory": "128Mi"},
            "limits": {"cpu": "500m", "memory": "256Mi"},
        },
    }
    base.update(overrides)
    return base


def netpol(name="np", namespace="apps", selector=None, ingress=None, egress=None):
    spec = {"podSelector": selector if selector is not None else {}}
    if ingress is not None:
        spec["ingress"] = ingress
    if egress is not None:
        spec["egress"] = egress
    return {
        "apiVersion": "networking.k8s.io/v1",
        "kind": "NetworkPolicy",
        "metadata": {"name": name, "namespace": namespace},
        "spec": spec,
    }


def covered_pod_doc(**kwargs):
    """A pod plus a real network policy so BI-NETPOL stays quiet."""
    labels = {"app": "x"}
    p = pod(labels=labels, **kwargs)
    p["metadata"]["labels"] = labels
    return dump_docs(p, netpol(selector={"matchLabels": labels}, ingress=[{}]))


def test_policy_catalog_is_fixed():
    assert len(BUILTIN_POLICIES) == 13
    assert len({p.policy_id for p in BUILTIN_POLICIES}) == 13
    assert len({p.canonical_key for p in BUILTIN_POLICIES}) == 13
    assert all(p.description for p in BUILTIN_POLICIES)


def test_listing_pod_reports_missing_memory_request(busybox_text):
    findings = analyze(busybox_text)
    mem_req = [f for f in findings if f.policy.policy_id == "BI-MEM-REQ"]
    assert len(mem_req) == 1
    assert mem_req[0].location == "busybox-container"
    assert mem_req[0].resource.name == "busybox-pod"


def test_absent_privilege_escalation_key_is_violation():
    text = dump_docs(pod(containers=[container(securityContext={})]))
    assert "BI-PRIV-ESC" in ids(analyze(text))


def test_explicit_false_priv_esc_is_clean():
    text = covered_pod_doc(containers=[container()])
    assert "BI-PRIV-ESC" not in ids(analyze(text))


# --- the three §-style regressions ------------------------------------------

def test_empty_volumes_list_never_triggers_hostpath():
    for volumes in ([], None):
        text = dump_docs(pod(containers=[container()], volumes=volumes))
        assert "BI-HOSTPATH" not in ids(analyze(text))


def test_hostpath_volume_detected_when_list_nonempty():
    text = dump_docs(
        pod(containers=[container()], volumes=[{"name": "h", "hostPath": {"path": "/proc"}}])
    )
    assert "BI-HOSTPATH" in ids(analyze(text))


def test_empty_networkpolicy_in_other_namespace_does_not_cover():
    p = pod(namespace="apps", labels={"app": "x"}, containers=[container()])
    other_ns_policy = netpol(namespace="elsewhere", selector={}, ingress=[{}])
    assert "BI-NETPOL" in ids(analyze(dump_docs(p, other_ns_policy)))


def test_networkpolicy_without_rules_does_not_cover():
    p = pod(namespace="apps", labels={"app": "x"}, containers=[container()])
    no_rules = netpol(namespace="apps", selector={})
    assert "BI-NETPOL" in ids(analyze(dump_docs(p, no_rules)))


def test_matching_networkpolicy_with_rule_covers():
    p = pod(namespace="apps", labels={"app": "x"}, containers=[container()])
    good = netpol(namespace="apps", selector={"matchLabels": {"app": "x"}}, ingress=[{}])
    assert "BI-NETPOL" not in ids(analyze(dump_docs(p, good)))


def test_selector_mismatch_does_not_cover():
    p = pod(namespace="apps", labels={"app": "x"}, containers=[container()])
    wrong = netpol(namespace="apps", selector={"matchLabels": {"app": "y"}}, egress=[{}])
    assert "BI-NETPOL" in ids(analyze(dump_docs(p, wrong)))


def test_zero_and_string_limits_are_sanity_violations():
    for bad in (0, "john"):
        c = container()
        c["resources"]["limits"]["memory"] = bad
        text = dump_docs(pod(containers=[c]))
        assert "BI-QTY-SANE" in ids(analyze(text)), f"value {bad!r} accepted"


def test_huge_limit_values_are_sanity_violations():
    c = container()
    c["resources"]["limits"]["memory"] = "100Ti"
    assert "BI-QTY-SANE" in ids(analyze(dump_docs(pod(containers=[c]))))
    c = container()
    c["resources"]["limits"]["cpu"] = "1000"
    assert "BI-QTY-SANE" in ids(analyze(dump_docs(pod(containers=[c]))))


def test_quantity_ceiling_is_configurable():
    c = container()
    c["resources"]["limits"]["memory"] = "100Ti"
    text = dump_docs(pod(containers=[c]))
    from fractions import Fraction

    lenient = AnalyzerConfig(memory_ceiling=Fraction(2**50))
    assert "BI-QTY-SANE" not in ids(analyze(text, config=lenient))


# --- remaining policies -------------------------------------------------------

def test_privileged_and_sys_admin():
    c = container(
        securityContext={
            "allowPrivilegeEscalation": False,
            "privileged": True,
            "capabilities": {"add": ["SYS_ADMIN"]},
        }
    )
    found = ids(analyze(dump_docs(pod(containers=[c]))))
    assert "BI-PRIVILEGED" in found
    assert "BI-SYS-ADMIN" in found


def test_image_tag_rules():
    cases = {
        "app:1.0.0": False,
        "app:latest": True,
        "app": True,
        "registry.local:5000/team/app": True,
        "registry.local:5000/team/app:2.1": False,
        "app@sha256:abcd": False,
    }
    for image, should_flag in cases.items():
        text = dump_docs(pod(containers=[container(image=image)]))
        flagged = "BI-IMG-TAG" in ids(analyze(text))
        assert flagged == should_flag, image


def test_default_namespace_flagged_explicit_and_unset():
    explicit = pod(namespace="default", containers=[container()])
    assert "BI-NS-DEFAULT" in ids(analyze(dump_docs(explicit)))
    unset = pod(containers=[container()])
    del unset["metadata"]["namespace"]
    assert "BI-NS-DEFAULT" in ids(analyze(dump_docs(unset)))


def test_clusterrole_wildcard():
    role = {
        "apiVersion": "rbac.authorization.k8s.io/v1",
        "kind": "ClusterRole",
        "metadata": {"name": "too-much"},
        "rules": [{"apiGroups": ["*"], "resources": ["*"], "verbs": ["*"]}],
    }
    assert ids(analyze(dump_docs(role))) == ["BI-CR-WILDCARD"]
    role["rules"] = [{"apiGroups": [""], "resources": ["pods"], "verbs": ["get", "list"]}]
    assert ids(analyze(dump_docs(role))) == []


def test_workload_kinds_checked_via_pod_template():
    deploy = {
        "apiVersion": "apps/v1",
        "kind": "Deployment",
        "metadata": {"name": "d", "namespace": "apps"},
        "spec": {"template": {"metadata": {"labels": {"app": "d"}}, "spec": {"containers": [container()]}}},
    }
    cron = {
        "apiVersion": "batch/v1",
        "kind": "CronJob",
        "metadata": {"name": "cj", "namespace": "apps"},
        "spec": {
            "jobTemplate": {
                "spec": {"template": {"metadata": {}, "spec": {"containers": [container(image="x")]}}}
            }
        },
    }
    found = ids(analyze(dump_docs(deploy, cron)))
    assert "BI-IMG-TAG" in found  # from the CronJob's untagged image


def test_analyzer_is_deterministic(busybox_text):
    a = analyze(busybox_text)
    b = analyze(busybox_text)
    assert [(f.policy.policy_id, f.resource.name, f.location) for f in a] == [
        (f.policy.policy_id, f.resource.name, f.location) for f in b
    ]


def test_memory_request_fix_is_monotonic(busybox_text):
    before = analyze(busybox_text)
    fixed = busybox_text.replace(
        "      requests:\n        cpu: 250m",
        "      requests:\n        memory: 250Mi\n        cpu: 250m",
    )
    after = analyze(fixed)
    before_keys = {(f.policy.policy_id, f.location) for f in before}
    after_keys = {(f.policy.policy_id, f.location) for f in after}
    assert before_keys - after_keys == {("BI-MEM-REQ", "busybox-container")}
    assert after_keys <= before_keys


def test_multi_container_pod_counts_per_container():
    c1 = container(name="one")
    del c1["resources"]["requests"]["memory"]
    c2 = container(name="two")
    del c2["resources"]["requests"]["memory"]
    findings = analyze(dump_docs(pod(containers=[c1, c2])))
    mem = [f for f in findings if f.policy.policy_id == "BI-MEM-REQ"]
    assert [f.location for f in mem] == ["one", "two"]
