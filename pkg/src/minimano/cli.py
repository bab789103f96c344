"""Operator command line.

One binary with hyphenated verbs (stack-create, stack-list, ...), a token
carried via --token or MINIMANO_TOKEN, and a state file via --state or
MINIMANO_STATE (default ./minimano-state.json). Output is a human table
by default or one JSON object per line with --format machine.

Exit codes: 0 success, 2 validation/usage, 3 authorization, 4 deployment
failure, 5 I/O, 6 not found.
"""

import argparse
import hashlib
import json
import os
import sys
import time

from . import scenario as scenario_mod
from .engine import CREATE_COMPLETE, CREATE_IN_PROGRESS, DELETE_COMPLETE
from .errors import (
    DeployError,
    MiniManoError,
    StateIOError,
    TemplateError,
)
from .hot import parse_template, validate_template
from .statefile import DEFAULT_STATE_PATH, load_world, locked_state, save_world
from .telemetry import HealerConfig
from .world import World

TOKEN_ENV = "MINIMANO_TOKEN"
STATE_ENV = "MINIMANO_STATE"


# ---------------------------------------------------------------------------
# output rendering


class Printer:
    def __init__(self, mode):
        self.mode = mode

    def table(self, headers, rows):
        if self.mode == "machine":
            for row in rows:
                print(json.dumps(dict(zip(headers, row)), separators=(",", ":")))
            return
        widths = [len(h) for h in headers]
        text_rows = [[_cell(v) for v in row] for row in rows]
        for row in text_rows:
            widths = [max(w, len(c)) for w, c in zip(widths, row)]
        print("  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip())
        for row in text_rows:
            print("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())

    def obj(self, data):
        if self.mode == "machine":
            print(json.dumps(data, separators=(",", ":")))
            return
        for key, value in data.items():
            if isinstance(value, (dict, list)):
                value = json.dumps(value)
            print(f"{key}: {_cell(value)}")

    def line(self, text, machine_obj=None):
        if self.mode == "machine":
            print(json.dumps(machine_obj if machine_obj is not None else {"message": text},
                             separators=(",", ":")))
        else:
            print(text)


def _cell(value):
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


# ---------------------------------------------------------------------------
# small helpers


def _read_file(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise StateIOError(f"cannot read {what} {path!r}: {exc}") from None


def _read_json_file(path, what):
    text = _read_file(path, what)
    try:
        return json.loads(text)
    except ValueError as exc:
        raise TemplateError(f"{what} {path!r} is not valid JSON: {exc}") from None


def _parse_kv_parameters(chunks):
    provided = {}
    for chunk in chunks or []:
        for pair in chunk.split(","):
            pair = pair.strip()
            if not pair:
                continue
            if "=" not in pair:
                raise TemplateError(f"parameters must be key=value pairs, got {pair!r}")
            key, value = pair.split("=", 1)
            provided[key.strip()] = value
    return provided


def _require(world, args, action):
    return world.identity.require(args.token, action)


# ---------------------------------------------------------------------------
# handlers: identity


def cmd_tenant_create(world, args, out):
    tenant = world.identity.create_tenant(args.name, args.token)
    out.obj({"id": tenant.id, "name": tenant.name})
    return 0


def cmd_user_create(world, args, out):
    user = world.identity.create_user(args.name, args.password, args.token)
    out.obj({"id": user.id, "name": user.name})
    return 0


def cmd_role_assign(world, args, out):
    world.identity.assign_role(args.user, args.tenant, args.role, args.token)
    out.line(f"assigned {args.role} to {args.user} in {args.tenant}",
             {"user": args.user, "tenant": args.tenant, "role": args.role})
    return 0


def cmd_token_issue(world, args, out):
    token = world.identity.authenticate(args.user, args.password, args.tenant)
    out.obj({"token": token.id, "tenant_id": token.tenant_id,
             "roles": token.roles, "expires_at": token.expires_at})
    return 0


def cmd_service_register(world, args, out):
    world.identity.register_service(args.name, args.url, args.token)
    out.line(f"registered {args.name} -> {args.url}", {"name": args.name, "url": args.url})
    return 0


def cmd_endpoint_lookup(world, args, out):
    url = world.identity.lookup_endpoint(args.token, args.name)
    out.line(url, {"name": args.name, "url": url})
    return 0


# ---------------------------------------------------------------------------
# handlers: provider resources


def cmd_image_create(world, args, out):
    claims = _require(world, args, "images:create")
    if args.payload_file:
        try:
            payload = open(args.payload_file, "rb").read()
        except OSError as exc:
            raise StateIOError(f"cannot read payload file: {exc}") from None
    else:
        payload = (args.payload if args.payload is not None else args.name).encode()
    image = world.provider.register_image(
        claims.tenant_id, args.name, payload,
        generic=not args.not_generic, cloud_init=not args.no_cloud_init,
    )
    out.obj({"id": image.id, "name": image.name, "generic": image.generic,
             "cloud_init": image.cloud_init})
    return 0


def cmd_flavor_create(world, args, out):
    claims = _require(world, args, "flavors:create")
    flavor = world.provider.create_flavor(
        claims.tenant_id, args.name, args.vcpus, args.ram, args.disk
    )
    out.obj({"id": flavor.id, "name": flavor.name, "vcpus": flavor.vcpus,
             "ram_mib": flavor.ram_mib, "disk_gib": flavor.disk_gib})
    return 0


def cmd_keypair_create(world, args, out):
    claims = _require(world, args, "keypairs:create")
    keypair, private_key = world.provider.create_keypair(claims.tenant_id, args.name)
    if out.mode == "machine":
        out.obj({"id": keypair.id, "name": keypair.name,
                 "public_key": keypair.public_key, "private_key": private_key})
    else:
        # the private half is shown exactly once, here
        print(f"name: {keypair.name}")
        print(f"public_key: {keypair.public_key}")
        print(private_key)
    return 0


def cmd_secgroup_create(world, args, out):
    claims = _require(world, args, "secgroups:create")
    group = world.provider.create_security_group(claims.tenant_id, args.name)
    out.obj({"id": group.id, "name": group.name})
    return 0


def cmd_secgroup_rule_add(world, args, out):
    claims = _require(world, args, "secgroups:rule_add")
    world.provider.add_security_group_rule(
        claims.tenant_id, args.group, args.protocol, args.port_min, args.port_max,
        remote=args.remote, direction=args.direction,
    )
    out.line(f"rule added to {args.group}",
             {"group": args.group, "protocol": args.protocol,
              "port_min": args.port_min, "port_max": args.port_max, "remote": args.remote})
    return 0


def cmd_net_create(world, args, out):
    claims = _require(world, args, "networks:create")
    network = world.provider.create_network(claims.tenant_id, args.name, args.cidr, args.gateway)
    out.obj({"id": network.id, "name": network.name, "cidr": network.cidr,
             "gateway": network.gateway})
    return 0


def cmd_router_create(world, args, out):
    claims = _require(world, args, "routers:create")
    router = world.provider.create_router(claims.tenant_id, args.name, external=args.external)
    out.obj({"id": router.id, "name": router.name, "external_gateway": router.external_gateway})
    return 0


def cmd_router_attach(world, args, out):
    claims = _require(world, args, "routers:attach")
    world.provider.attach_subnet(claims.tenant_id, args.router, args.network)
    out.line(f"attached {args.network} to {args.router}",
             {"router": args.router, "network": args.network})
    return 0


def cmd_router_gateway_set(world, args, out):
    claims = _require(world, args, "routers:gateway")
    world.provider.set_external_gateway(claims.tenant_id, args.router)
    out.line(f"external gateway set on {args.router}", {"router": args.router})
    return 0


def cmd_fip_allocate(world, args, out):
    claims = _require(world, args, "fips:allocate")
    fip = world.provider.allocate_floating_ip(claims.tenant_id)
    out.obj({"id": fip.id, "address": fip.address})
    return 0


def cmd_fip_associate(world, args, out):
    _require(world, args, "fips:associate")
    world.provider.associate_floating_ip(args.fip, args.instance)
    out.line(f"associated {args.fip} with {args.instance}",
             {"fip": args.fip, "instance": args.instance})
    return 0


def cmd_fip_disassociate(world, args, out):
    _require(world, args, "fips:disassociate")
    world.provider.disassociate_floating_ip(args.fip)
    out.line(f"disassociated {args.fip}", {"fip": args.fip})
    return 0


def cmd_fip_release(world, args, out):
    _require(world, args, "fips:release")
    world.provider.release_floating_ip(args.fip)
    out.line(f"released {args.fip}", {"fip": args.fip})
    return 0


def cmd_volume_create(world, args, out):
    claims = _require(world, args, "volumes:create")
    volume = world.provider.create_volume(claims.tenant_id, args.size)
    out.obj({"id": volume.id, "size_gib": volume.size_gib})
    return 0


def cmd_volume_attach(world, args, out):
    _require(world, args, "volumes:attach")
    world.provider.attach_volume(args.volume, args.instance)
    out.line(f"attached {args.volume} to {args.instance}",
             {"volume": args.volume, "instance": args.instance})
    return 0


def cmd_volume_detach(world, args, out):
    _require(world, args, "volumes:detach")
    world.provider.detach_volume(args.volume)
    out.line(f"detached {args.volume}", {"volume": args.volume})
    return 0


def cmd_volume_snapshot(world, args, out):
    _require(world, args, "volumes:snapshot")
    snapshot = world.provider.snapshot_volume(args.volume)
    out.obj({"id": snapshot.id, "volume": args.volume, "taken_at": snapshot.taken_at})
    return 0


def cmd_object_put(world, args, out):
    claims = _require(world, args, "objects:put")
    if args.file:
        try:
            payload = open(args.file, "rb").read()
        except OSError as exc:
            raise StateIOError(f"cannot read object file: {exc}") from None
    else:
        payload = (args.data or "").encode()
    world.provider.put_object(claims.tenant_id, args.container, args.name, payload)
    out.line(f"stored {args.container}/{args.name} ({len(payload)} bytes)",
             {"container": args.container, "name": args.name, "bytes": len(payload)})
    return 0


def cmd_object_get(world, args, out):
    claims = _require(world, args, "objects:get")
    payload = world.provider.get_object(claims.tenant_id, args.container, args.name)
    if args.output:
        try:
            with open(args.output, "wb") as fh:
                fh.write(payload)
        except OSError as exc:
            raise StateIOError(f"cannot write output file: {exc}") from None
        out.line(f"wrote {len(payload)} bytes to {args.output}",
                 {"container": args.container, "name": args.name, "bytes": len(payload)})
    elif out.mode == "machine":
        import base64
        out.obj({"container": args.container, "name": args.name,
                 "payload_b64": base64.b64encode(payload).decode()})
    else:
        sys.stdout.buffer.write(payload)
        sys.stdout.buffer.flush()
    return 0


def cmd_connectivity_check(world, args, out):
    _require(world, args, "connectivity:check")
    result = world.provider.check_connectivity(args.src, args.dst, args.protocol, args.port)
    out.obj({"allowed": result.allowed, "reason": result.reason,
             "observed_dst": result.observed_dst})
    return 0


# ---------------------------------------------------------------------------
# handlers: stacks


def cmd_template_validate(world, args, out):
    source = _read_file(args.file, "template")
    doc = parse_template(source)
    report = validate_template(doc)
    for finding in report.findings:
        out.line(str(finding), {"severity": finding.severity, "path": finding.path,
                                "message": finding.message})
    out.line(f"{len(report.errors)} error(s), {len(report.warnings)} warning(s)",
             {"errors": len(report.errors), "warnings": len(report.warnings)})
    return 0 if report.ok else 2


def cmd_stack_create(world, args, out):
    _require(world, args, "stacks:create")  # gate before touching the filesystem
    source = _read_file(args.file, "template")
    doc = parse_template(source)
    provided = _parse_kv_parameters(args.parameters)
    stack = world.engine.create_stack(
        args.name, doc, provided, token=args.token,
        template_dir=os.path.dirname(os.path.abspath(args.file)),
    )
    out.obj({"id": stack.id, "name": stack.name, "status": stack.status})
    args._created_stack_id = stack.id
    args._created_status = stack.status
    args._created_failure = stack.failure_reason
    return 0


def cmd_stack_list(world, args, out):
    rows = world.engine.list_stacks(args.token)
    out.table(["id", "name", "status", "created_at"],
              [(r["id"], r["name"], r["status"], r["created_at"]) for r in rows])
    return 0


def cmd_stack_show(world, args, out):
    detail = world.engine.show_stack(args.uuid, args.token)
    if out.mode == "machine":
        out.obj(detail)
    else:
        for key in ("id", "name", "status", "created_at", "failure_reason"):
            print(f"{key}: {_cell(detail[key])}")
        print(f"parameters: {json.dumps(detail['parameters'])}")
        print(f"outputs: {json.dumps(detail['outputs'])}")
        out.table(
            ["resource", "type", "state", "id"],
            [(n, r["type"], r["state"], r["id"]) for n, r in detail["resources"].items()],
        )
    return 0


def cmd_stack_delete(world, args, out):
    status = world.engine.delete_stack(args.uuid, args.token)
    out.line(f"{args.uuid}: {status}", {"id": args.uuid, "status": status})
    return 0 if status == DELETE_COMPLETE else 4


def cmd_signal(world, args, out):
    try:
        payload = json.loads(args.payload)
    except ValueError as exc:
        raise TemplateError(f"signal payload is not valid JSON: {exc}") from None
    ack = world.engine.signal(args.url, payload, token=args.token)
    if ack == "ignored-already-resolved":
        print("warning: wait condition already resolved; signal ignored", file=sys.stderr)
    out.line(ack, {"ack": ack})
    return 0


# ---------------------------------------------------------------------------
# handlers: telemetry and autonomic verbs


def cmd_alarm_create(world, args, out):
    _require(world, args, "alarms:create")
    alarm = world.telemetry.create_alarm(
        args.name, args.metric, args.aggregate, args.comparison,
        args.threshold, args.window, args.target, args.action,
    )
    out.obj({"id": alarm.id, "name": alarm.name, "state": alarm.state})
    return 0


def cmd_group_create(world, args, out):
    claims = _require(world, args, "groups:create")
    try:
        member = json.loads(args.member)
    except ValueError as exc:
        raise TemplateError(f"--member is not valid JSON: {exc}") from None
    group = world.telemetry.create_group(
        args.name, claims.tenant_id, member, args.min, args.max, args.desired
    )
    out.obj({"id": group.id, "name": group.name, "desired": group.desired,
             "members": group.members})
    return 0


def cmd_metric_push(world, args, out):
    _require(world, args, "telemetry:record")
    sample = world.telemetry.record_metric(args.resource, args.metric, args.value)
    out.line(f"recorded {args.metric}={args.value} at tick {sample.tick}",
             {"resource": args.resource, "metric": args.metric,
              "value": sample.value, "tick": sample.tick})
    return 0


def cmd_fault_inject(world, args, out):
    _require(world, args, "faults:inject")
    world.telemetry.inject_fault(args.target, args.kind)
    out.line(f"injected {args.kind} on {args.target}",
             {"target": args.target, "fault_kind": args.kind})
    return 0


def cmd_clock_advance(world, args, out):
    _require(world, args, "clock:advance")
    tick = world.advance_clock(args.ticks)
    out.line(f"tick: {tick}", {"tick": tick})
    return 0


def cmd_events_tail(world, args, out):
    _require(world, args, "events:read")
    events = world.events[-args.count:] if args.count else world.events
    if out.mode == "machine":
        for event in events:
            print(json.dumps(event, separators=(",", ":")))
    else:
        out.table(
            ["tick", "kind", "subject", "detail"],
            [(e["tick"], e["kind"], e["subject"], json.dumps(e["detail"])) for e in events],
        )
    return 0


def cmd_scenario_run(args, out):
    spec = scenario_mod.load_scenario(args.file)
    world = scenario_mod.run_scenario(spec, seed=args.seed)
    lines = scenario_mod.event_log_lines(world)
    log_text = "\n".join(lines) + ("\n" if lines else "")
    if args.events_out:
        try:
            with open(args.events_out, "w", encoding="utf-8") as fh:
                fh.write(log_text)
        except OSError as exc:
            raise StateIOError(f"cannot write event log: {exc}") from None
    snapshot_text = json.dumps(world.to_snapshot(), separators=(",", ":"))
    if args.snapshot_out:
        try:
            with open(args.snapshot_out, "w", encoding="utf-8") as fh:
                fh.write(snapshot_text)
        except OSError as exc:
            raise StateIOError(f"cannot write snapshot: {exc}") from None
    out.obj({
        "ticks": world.tick,
        "events": len(world.events),
        "event_log_sha256": hashlib.sha256(log_text.encode()).hexdigest(),
        "snapshot_sha256": hashlib.sha256(snapshot_text.encode()).hexdigest(),
    })
    return 0


def cmd_init(args, out):
    if os.path.exists(args.state) and not args.force:
        raise StateIOError(f"state file {args.state!r} already exists (use --force)")
    if args.healer_window < args.healer_interval:
        raise TemplateError("--healer-window must be at least --healer-interval")
    hosts = _read_json_file(args.hosts, "host inventory") if args.hosts else None
    policy = _read_json_file(args.policy, "policy file") if args.policy else None
    world = World(
        seed=args.seed, hosts=hosts, policy=policy,
        admin_credential=args.admin_password, template_dir=args.template_dir,
    )
    world.telemetry.healer = HealerConfig(
        enabled=args.healer_enabled,
        detect_interval=args.healer_interval,
        heal_window=args.healer_window,
    )
    save_world(world, args.state)
    out.obj({"state": args.state, "seed": world.seed,
             "hosts": sorted(world.provider.hosts)})
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _verb(sub, common, name, handler, mutates, configure, help_text):
    parser = sub.add_parser(name, parents=[common], help=help_text)
    configure(parser)
    parser.set_defaults(_handler=handler, _mutates=mutates, _verb=name)


def _noop(parser):
    pass


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--state", default=None, help="state file path (or MINIMANO_STATE)")
    common.add_argument("--token", default=None, help="auth token (or MINIMANO_TOKEN)")
    common.add_argument("--format", choices=["table", "machine"], default="table")
    common.add_argument("--tick-ms", type=int, default=100,
                        help="wall milliseconds per tick while blocking")

    parser = argparse.ArgumentParser(prog="minimano", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def v(name, handler, mutates, configure=_noop, help_text=""):
        _verb(sub, common, name, handler, mutates, configure, help_text)

    def init_args(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--hosts", help="JSON host inventory file")
        p.add_argument("--policy", help="JSON policy file (action -> role)")
        p.add_argument("--admin-password", default="admin")
        p.add_argument("--template-dir", default=None)
        p.add_argument("--healer-enabled", action="store_true")
        p.add_argument("--healer-interval", type=int, default=5)
        p.add_argument("--healer-window", type=int, default=20)
        p.add_argument("--force", action="store_true")

    v("init", cmd_init, True, init_args, "create a fresh state file")

    v("tenant-create", cmd_tenant_create, True,
      lambda p: p.add_argument("name"), "create a tenant (admin)")
    v("user-create", cmd_user_create, True,
      lambda p: (p.add_argument("name"), p.add_argument("--password", required=True)),
      "create a user (admin)")
    v("role-assign", cmd_role_assign, True,
      lambda p: (p.add_argument("user"), p.add_argument("tenant"), p.add_argument("role")),
      "assign a role to a user in a tenant (admin)")
    v("token-issue", cmd_token_issue, True,
      lambda p: (p.add_argument("--user", required=True),
                 p.add_argument("--password", required=True),
                 p.add_argument("--tenant", required=True)),
      "authenticate and print a token")
    v("service-register", cmd_service_register, True,
      lambda p: (p.add_argument("name"), p.add_argument("url")),
      "register a service endpoint (admin)")
    v("endpoint-lookup", cmd_endpoint_lookup, False,
      lambda p: p.add_argument("name"), "look up a service endpoint")

    v("image-create", cmd_image_create, True,
      lambda p: (p.add_argument("name"),
                 p.add_argument("--payload"),
                 p.add_argument("--payload-file"),
                 p.add_argument("--not-generic", action="store_true"),
                 p.add_argument("--no-cloud-init", action="store_true")),
      "register a disk image")
    v("flavor-create", cmd_flavor_create, True,
      lambda p: (p.add_argument("name"),
                 p.add_argument("--vcpus", type=int, required=True),
                 p.add_argument("--ram", type=int, required=True),
                 p.add_argument("--disk", type=int, required=True)),
      "define a flavor")
    v("keypair-create", cmd_keypair_create, True,
      lambda p: p.add_argument("name"), "generate a keypair; prints the private key once")
    v("secgroup-create", cmd_secgroup_create, True,
      lambda p: p.add_argument("name"), "create a security group")
    v("secgroup-rule-add", cmd_secgroup_rule_add, True,
      lambda p: (p.add_argument("group"),
                 p.add_argument("--protocol", required=True, choices=["tcp", "udp", "icmp"]),
                 p.add_argument("--port-min", type=int, default=0),
                 p.add_argument("--port-max", type=int, default=65535),
                 p.add_argument("--remote", default="0.0.0.0/0",
                                help="CIDR or security group name"),
                 p.add_argument("--direction", default="ingress", choices=["ingress", "egress"])),
      "add a security group rule")
    v("net-create", cmd_net_create, True,
      lambda p: (p.add_argument("name"),
                 p.add_argument("--cidr", required=True),
                 p.add_argument("--gateway")),
      "create a virtual network")
    v("router-create", cmd_router_create, True,
      lambda p: (p.add_argument("name"), p.add_argument("--external", action="store_true")),
      "create a virtual router")
    v("router-attach", cmd_router_attach, True,
      lambda p: (p.add_argument("router"), p.add_argument("network")),
      "attach a network's subnet to a router")
    v("router-gateway-set", cmd_router_gateway_set, True,
      lambda p: p.add_argument("router"), "give a router an external gateway")
    v("fip-allocate", cmd_fip_allocate, True, _noop, "allocate a floating address")
    v("fip-associate", cmd_fip_associate, True,
      lambda p: (p.add_argument("fip"), p.add_argument("instance")),
      "associate a floating address with an instance")
    v("fip-disassociate", cmd_fip_disassociate, True,
      lambda p: p.add_argument("fip"), "disassociate a floating address")
    v("fip-release", cmd_fip_release, True,
      lambda p: p.add_argument("fip"), "release (deallocate) a floating address")
    v("volume-create", cmd_volume_create, True,
      lambda p: p.add_argument("--size", type=int, required=True), "create a volume")
    v("volume-attach", cmd_volume_attach, True,
      lambda p: (p.add_argument("volume"), p.add_argument("instance")), "attach a volume")
    v("volume-detach", cmd_volume_detach, True,
      lambda p: p.add_argument("volume"), "detach a volume")
    v("volume-snapshot", cmd_volume_snapshot, True,
      lambda p: p.add_argument("volume"), "snapshot a volume")
    v("object-put", cmd_object_put, True,
      lambda p: (p.add_argument("container"), p.add_argument("name"),
                 p.add_argument("--data"), p.add_argument("--file")),
      "store an object")
    v("object-get", cmd_object_get, False,
      lambda p: (p.add_argument("container"), p.add_argument("name"),
                 p.add_argument("--output")),
      "fetch an object")
    v("connectivity-check", cmd_connectivity_check, False,
      lambda p: (p.add_argument("src"), p.add_argument("dst"),
                 p.add_argument("--protocol", required=True, choices=["tcp", "udp", "icmp"]),
                 p.add_argument("--port", type=int)),
      "evaluate reachability between two endpoints")

    v("template-validate", cmd_template_validate, False,
      lambda p: p.add_argument("-f", "--file", required=True),
      "parse and validate a template without deploying")
    v("stack-create", cmd_stack_create, True,
      lambda p: (p.add_argument("name"),
                 p.add_argument("-f", "--file", required=True),
                 p.add_argument("--parameters", action="append",
                                help="key=value[,key=value...]"),
                 p.add_argument("--no-wait", action="store_true")),
      "deploy a template as a stack")
    v("stack-list", cmd_stack_list, False, _noop, "list this tenant's stacks")
    v("stack-show", cmd_stack_show, False,
      lambda p: p.add_argument("uuid"), "show one stack in detail")
    v("stack-delete", cmd_stack_delete, True,
      lambda p: (p.add_argument("uuid"), p.add_argument("--no-wait", action="store_true")),
      "delete a stack and its resources")
    v("signal", cmd_signal, True,
      lambda p: (p.add_argument("url"), p.add_argument("payload")),
      "deliver a wait-condition signal payload")

    v("alarm-create", cmd_alarm_create, True,
      lambda p: (p.add_argument("name"),
                 p.add_argument("--metric", required=True),
                 p.add_argument("--aggregate", required=True, choices=["avg", "max", "min"]),
                 p.add_argument("--comparison", required=True, choices=["gt", "lt", "ge", "le"]),
                 p.add_argument("--threshold", type=float, required=True),
                 p.add_argument("--window", type=int, required=True),
                 p.add_argument("--target", required=True),
                 p.add_argument("--action", required=True,
                                choices=["scale_out", "scale_in", "notify"])),
      "define a telemetry alarm")
    v("group-create", cmd_group_create, True,
      lambda p: (p.add_argument("name"),
                 p.add_argument("--min", type=int, required=True),
                 p.add_argument("--max", type=int, required=True),
                 p.add_argument("--desired", type=int, required=True),
                 p.add_argument("--member", required=True,
                                help="instance spec as JSON")),
      "create a scaling group")
    v("metric-push", cmd_metric_push, True,
      lambda p: (p.add_argument("resource"), p.add_argument("metric"),
                 p.add_argument("value", type=float)),
      "record one metric sample at the current tick")
    v("fault-inject", cmd_fault_inject, True,
      lambda p: (p.add_argument("target"),
                 p.add_argument("--kind", default="instance_crash",
                                choices=["instance_crash"])),
      "crash an instance")
    v("clock-advance", cmd_clock_advance, True,
      lambda p: p.add_argument("ticks", type=int),
      "advance the logical clock")
    v("events-tail", cmd_events_tail, False,
      lambda p: p.add_argument("-n", "--count", type=int, default=20),
      "print the tail of the event log")
    v("scenario-run", cmd_scenario_run, False,
      lambda p: (p.add_argument("file"),
                 p.add_argument("--seed", type=int, default=None),
                 p.add_argument("--events-out"),
                 p.add_argument("--snapshot-out")),
      "replay a scenario file in a fresh world")
    return parser


# ---------------------------------------------------------------------------
# driver


def _resolve_common(args):
    args.state = args.state or os.environ.get(STATE_ENV) or DEFAULT_STATE_PATH
    args.token = args.token or os.environ.get(TOKEN_ENV)


def _wait_for_stack(path, stack_id, tick_ms):
    """Advance the clock one tick at a time until the stack is terminal,
    releasing the state lock between ticks so signals can interleave."""
    while True:
        with locked_state(path):
            world = load_world(path)
            stack = world.engine.stacks[stack_id]
            if stack.status != CREATE_IN_PROGRESS:
                return stack
            world.advance_clock(1)
            save_world(world, path)
        if tick_ms:
            time.sleep(tick_ms / 1000.0)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _resolve_common(args)
    out = Printer(args.format)
    try:
        if args.verb == "init":
            return cmd_init(args, out)
        if args.verb == "scenario-run":
            return cmd_scenario_run(args, out)
        if args.verb == "template-validate":
            return cmd_template_validate(None, args, out)

        with locked_state(args.state):
            world = load_world(args.state)
            code = args._handler(world, args, out)
            if args._mutates:
                save_world(world, args.state)

        if args.verb == "stack-create":
            status = args._created_status
            failure = args._created_failure
            if status == CREATE_IN_PROGRESS and not args.no_wait:
                stack = _wait_for_stack(args.state, args._created_stack_id, args.tick_ms)
                status, failure = stack.status, stack.failure_reason
            if status not in (CREATE_COMPLETE, CREATE_IN_PROGRESS):
                print(f"error: {failure}", file=sys.stderr)
                return DeployError.exit_code
        return code
    except MiniManoError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return StateIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
