"""Stack orchestration.

A stack create builds a deployment plan from the template's dependency
graph and walks it wave by wave, in declaration order inside each wave.
Deployment is resumable: a wait condition pauses the walk until enough
confirmation signals arrive (or its deadline passes), and a nested stack
pauses the parent until the child finishes. Failures never roll back;
whatever was created is retained for inspection and removed by delete.

Wait-signal addresses look like ``mm://wait/<handle-id>`` and accept the
single-line JSON payload ``{"status": "SUCCESS"|"FAILURE", "id": ...,
"data": ...}`` where id and data are optional.
"""

import json
import os
import random
from dataclasses import dataclass, field

from .errors import (
    ConflictError,
    DeployError,
    MiniManoError,
    NotFoundError,
    TemplateError,
)
from .hot import (
    DEFAULT_REGISTRY,
    RANDOM_STRING_TYPE,
    SEQUENCES,
    SERVER_TYPE,
    WAIT_CONDITION_TYPE,
    WAIT_HANDLE_TYPE,
    EvalContext,
    TemplateDoc,
    bind_parameters,
    evaluate_expr,
    is_nested_type,
    parse_template,
    serialize_template,
    validate_template,
)
from .plan import build_plan

SIGNAL_URL_PREFIX = "mm://wait/"
NESTING_LIMIT = 8

CREATE_IN_PROGRESS = "CREATE_IN_PROGRESS"
CREATE_COMPLETE = "CREATE_COMPLETE"
CREATE_FAILED = "CREATE_FAILED"
DELETE_IN_PROGRESS = "DELETE_IN_PROGRESS"
DELETE_COMPLETE = "DELETE_COMPLETE"
DELETE_FAILED = "DELETE_FAILED"

_BLOCKED = object()


@dataclass
class ResourceRecord:
    name: str
    uuid: str
    type: str
    state: str  # IN_PROGRESS | COMPLETE | FAILED | DELETED
    attributes: dict = field(default_factory=dict)
    physical_id: str | None = None
    failure: str | None = None


@dataclass
class Stack:
    id: str
    name: str
    tenant_id: str
    status: str
    doc: TemplateDoc
    source: str  # canonical template text (what gets persisted)
    bound: dict
    waves: list
    records: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    parent: tuple | None = None  # (stack_id, resource_name)
    depth: int = 0
    created_at: int = 0
    failure_reason: str | None = None


@dataclass
class StackRun:
    stack_id: str
    token_id: str
    wave_idx: int = 0
    pos_idx: int = 0
    blocker: list | None = None  # ["wait", handle_id] | ["child", stack_id]
    template_dir: str | None = None


@dataclass
class WaitHandle:
    id: str
    stack_id: str
    resource_name: str
    signals: dict = field(default_factory=dict)  # signal id -> payload


@dataclass
class WaitCondition:
    handle_id: str
    stack_id: str
    resource_name: str
    required: int
    deadline: int
    outcome: str = "PENDING"  # PENDING | SUCCESS | TIMEOUT | FAILURE_SIGNALED


def handle_url(handle_id: str) -> str:
    return SIGNAL_URL_PREFIX + handle_id


def _handle_id_from_ref(ref: str) -> str:
    if ref.startswith(SIGNAL_URL_PREFIX):
        return ref[len(SIGNAL_URL_PREFIX):]
    return ref


class StackEngine:
    def __init__(self, core, identity, provider, template_dir=None, registry=None):
        self.core = core
        self.identity = identity
        self.provider = provider
        self.template_dir = template_dir
        self.registry = registry or DEFAULT_REGISTRY
        self.stacks = {}  # id -> Stack
        self.runs = {}  # stack id -> StackRun
        self.handles = {}  # handle id -> WaitHandle
        self.conditions = {}  # handle id -> WaitCondition

    # -- create -----------------------------------------------------------------

    def create_stack(self, name, doc: TemplateDoc, provided=None, token=None,
                     template_dir=None, parent=None, depth=0) -> Stack:
        claims = self.identity.require(token, "stacks:create")
        report = validate_template(doc, self.registry)
        if not report.ok:
            raise TemplateError(
                "template is not deployable: " + "; ".join(str(f) for f in report.errors)
            )
        for stack in self.stacks.values():
            if (
                stack.tenant_id == claims.tenant_id
                and stack.name == name
                and stack.status != DELETE_COMPLETE
            ):
                raise ConflictError(f"stack name {name!r} already in use")
        bound = bind_parameters(doc, provided or {})
        plan = build_plan(doc)
        stack = Stack(
            id=self.core.new_uuid(),
            name=name,
            tenant_id=claims.tenant_id,
            status=CREATE_IN_PROGRESS,
            doc=doc,
            source=serialize_template(doc),
            bound=bound,
            waves=plan.waves,
            parent=parent,
            depth=depth,
            created_at=self.core.tick,
        )
        self.stacks[stack.id] = stack
        self.core.emit("stack.create.start", stack.id, stack=stack.id, name=name)
        run = StackRun(stack_id=stack.id, token_id=token, template_dir=template_dir)
        self.runs[stack.id] = run
        self._pump_run(run)
        return stack

    # -- the resumable deployment walk ----------------------------------------------

    def _pump_run(self, run: StackRun):
        stack = self.stacks[run.stack_id]
        while True:
            if run.blocker is not None or stack.status != CREATE_IN_PROGRESS:
                return
            if run.wave_idx >= len(stack.waves):
                self._finalize_create(run, stack)
                return
            wave = stack.waves[run.wave_idx]
            if run.pos_idx >= len(wave):
                run.wave_idx += 1
                run.pos_idx = 0
                continue
            rname = wave[run.pos_idx]
            rdef = stack.doc.resources[rname]
            record = ResourceRecord(
                name=rname,
                uuid=self.core.new_uuid(),
                type=rdef.resource_type,
                state="IN_PROGRESS",
            )
            stack.records[rname] = record
            self.core.emit(
                "resource.create.start", f"{stack.id}/{rname}",
                stack=stack.id, resource=rname, type=rdef.resource_type,
            )
            try:
                result = self._deploy_resource(run, stack, rdef, record)
            except MiniManoError as exc:
                self._fail_resource(run, stack, rname, exc.message)
                return
            if result is _BLOCKED:
                return
            self._complete_resource(stack, record)
            run.pos_idx += 1

    def _eval_context(self, stack: Stack) -> EvalContext:
        ids = {}
        attrs = {}
        for name, record in stack.records.items():
            if record.state == "COMPLETE":
                ids[name] = record.uuid
                attrs[name] = record.attributes
        return EvalContext(params=stack.bound, resource_ids=ids, resource_attrs=attrs)

    def _complete_resource(self, stack: Stack, record: ResourceRecord):
        record.state = "COMPLETE"
        self.core.emit(
            "resource.create.complete", f"{stack.id}/{record.name}",
            stack=stack.id, resource=record.name, type=record.type,
        )

    def _fail_resource(self, run: StackRun, stack: Stack, rname, reason):
        record = stack.records.get(rname)
        if record is not None:
            record.state = "FAILED"
            record.failure = reason
        self.core.emit(
            "resource.create.failed", f"{stack.id}/{rname}",
            stack=stack.id, resource=rname, reason=reason,
        )
        stack.status = CREATE_FAILED
        stack.failure_reason = f"resource {rname}: {reason}"
        self.core.emit("stack.create.failed", stack.id, stack=stack.id, reason=stack.failure_reason)
        self.runs.pop(stack.id, None)
        self._notify_parent(stack)

    def _finalize_create(self, run: StackRun, stack: Stack):
        ctx = self._eval_context(stack)
        try:
            stack.outputs = {
                name: evaluate_expr(odef.value, ctx) for name, odef in stack.doc.outputs.items()
            }
        except MiniManoError as exc:
            stack.status = CREATE_FAILED
            stack.failure_reason = f"output evaluation: {exc.message}"
            self.core.emit("stack.create.failed", stack.id, stack=stack.id, reason=stack.failure_reason)
            self.runs.pop(stack.id, None)
            self._notify_parent(stack)
            return
        stack.status = CREATE_COMPLETE
        self.core.emit("stack.create.complete", stack.id, stack=stack.id, name=stack.name)
        self.runs.pop(stack.id, None)
        self._notify_parent(stack)

    def _notify_parent(self, child: Stack):
        if child.parent is None or child.status == CREATE_IN_PROGRESS:
            return
        parent_id, rname = child.parent
        parent_run = self.runs.get(parent_id)
        if parent_run is None or parent_run.blocker != ["child", child.id]:
            return
        parent = self.stacks[parent_id]
        parent_run.blocker = None
        if child.status == CREATE_COMPLETE:
            record = parent.records[rname]
            record.attributes = dict(child.outputs)
            self._complete_resource(parent, record)
            parent_run.pos_idx += 1
            self._pump_run(parent_run)
        else:
            self._fail_resource(parent_run, parent, rname, f"nested stack failed: {child.failure_reason}")

    # -- per-type deployment ------------------------------------------------------------

    def _deploy_resource(self, run, stack, rdef, record):
        rtype = rdef.resource_type
        if is_nested_type(rtype):
            return self._deploy_nested(run, stack, rdef, record)
        ctx = self._eval_context(stack)
        props = {name: evaluate_expr(expr, ctx) for name, expr in rdef.properties.items()}
        if rtype == SERVER_TYPE:
            return self._deploy_server(stack, rdef, record, props)
        if rtype == RANDOM_STRING_TYPE:
            return self._deploy_random_string(stack, rdef, record, props)
        if rtype == WAIT_HANDLE_TYPE:
            return self._deploy_wait_handle(stack, rdef, record)
        if rtype == WAIT_CONDITION_TYPE:
            return self._deploy_wait_condition(run, stack, rdef, record, props)
        raise DeployError(f"unknown resource type {rtype!r}")

    def _deploy_server(self, stack, rdef, record, props):
        networks = []
        for item in props.get("networks") or []:
            if not isinstance(item, dict) or "network" not in item:
                raise DeployError("networks entries must be maps with a 'network' key")
            networks.append(item["network"])
        fmt = props.get("user_data_format", "RAW")
        if fmt != "RAW":
            raise DeployError(f"unsupported user_data_format {fmt!r}")
        user_data = props.get("user_data")
        if user_data is not None and not isinstance(user_data, str):
            raise DeployError("user_data must evaluate to a string")
        spec = {
            "image": props["image"],
            "flavor": props["flavor"],
            "key_name": props.get("key_name"),
            "networks": networks,
            "security_groups": props.get("security_groups"),
            "user_data": user_data,
        }
        instance = self.provider.launch_instance(
            stack.tenant_id,
            spec,
            name=f"{stack.name}-{rdef.name}",
            signal_sink=self._internal_signal_sink,
        )
        record.physical_id = instance.id
        first_address = next(iter(instance.fixed_ips.values()), None)
        record.attributes = {
            "first_address": first_address,
            "instance_id": instance.id,
            "name": instance.name,
        }
        return record

    def _deploy_random_string(self, stack, rdef, record, props):
        length = props.get("length", 32)
        sequence = props.get("sequence", "alphanumeric")
        if not isinstance(length, int) or length < 1:
            raise DeployError("length must be a positive integer")
        if sequence not in SEQUENCES:
            raise DeployError(f"unknown sequence {sequence!r}")
        # keyed substream: the value depends only on (seed, stack, resource),
        # so a nested deployment matches a standalone one exactly
        rng = random.Random(f"{self.core.seed}:{stack.name}:{rdef.name}")
        alphabet = SEQUENCES[sequence]
        record.attributes = {"value": "".join(rng.choice(alphabet) for _ in range(length))}
        return record

    def _deploy_wait_handle(self, stack, rdef, record):
        handle = WaitHandle(id=record.uuid, stack_id=stack.id, resource_name=rdef.name)
        self.handles[handle.id] = handle
        record.attributes = {"curl_cli": handle_url(handle.id), "handle_id": handle.id}
        return record

    def _deploy_wait_condition(self, run, stack, rdef, record, props):
        handle_id = props.get("handle")
        if handle_id not in self.handles:
            raise DeployError("handle does not reference a deployed wait handle")
        if handle_id in self.conditions:
            raise DeployError("wait handle is already bound to a wait condition")
        timeout = props.get("timeout")
        count = props.get("count", 1)
        if not isinstance(timeout, int) or timeout < 1:
            raise DeployError("timeout must be a positive tick count")
        if not isinstance(count, int) or count < 1:
            raise DeployError("count must be a positive integer")
        condition = WaitCondition(
            handle_id=handle_id,
            stack_id=stack.id,
            resource_name=rdef.name,
            required=count,
            deadline=self.core.tick + timeout,
        )
        self.conditions[handle_id] = condition
        self._evaluate_condition(condition)
        if condition.outcome == "SUCCESS":
            self._complete_wait_record(record, condition)
            return record
        if condition.outcome == "FAILURE_SIGNALED":
            self.core.emit(
                "wait.failure", handle_id,
                stack=stack.id, resource=rdef.name, handle=handle_id,
            )
            raise DeployError("wait condition received a FAILURE signal")
        run.blocker = ["wait", handle_id]
        return _BLOCKED

    def _deploy_nested(self, run, stack, rdef, record):
        if stack.depth + 1 > NESTING_LIMIT:
            raise DeployError(f"nesting depth limit ({NESTING_LIMIT}) exceeded")
        path = self._resolve_template_path(rdef.resource_type, run.template_dir)
        try:
            source = open(path, encoding="utf-8").read()
        except OSError as exc:
            raise DeployError(f"cannot read nested template {rdef.resource_type!r}: {exc}") from None
        inner_doc = parse_template(source)
        ctx = self._eval_context(stack)
        provided = {name: evaluate_expr(expr, ctx) for name, expr in rdef.properties.items()}
        child = self.create_stack(
            name=f"{stack.name}-{rdef.name}",
            doc=inner_doc,
            provided=provided,
            token=run.token_id,
            template_dir=os.path.dirname(path),
            parent=(stack.id, rdef.name),
            depth=stack.depth + 1,
        )
        record.physical_id = child.id
        record.uuid = child.id
        if child.status == CREATE_COMPLETE:
            record.attributes = dict(child.outputs)
            return record
        if child.status == CREATE_FAILED:
            raise DeployError(f"nested stack failed: {child.failure_reason}")
        run.blocker = ["child", child.id]
        return _BLOCKED

    def _resolve_template_path(self, type_path, parent_dir):
        candidates = []
        if os.path.isabs(type_path):
            candidates.append(type_path)
        else:
            if parent_dir:
                candidates.append(os.path.join(parent_dir, type_path))
            if self.template_dir:
                candidates.append(os.path.join(self.template_dir, type_path))
        for candidate in candidates:
            if os.path.exists(candidate):
                return candidate
        raise DeployError(f"nested template {type_path!r} not found in the search path")

    # -- wait conditions and signals ---------------------------------------------------------

    def _internal_signal_sink(self, url, payload):
        self.deliver_signal(url, payload)

    def signal(self, handle_ref, payload, token=None) -> str:
        self.identity.require(token, "stacks:signal")
        return self.deliver_signal(handle_ref, payload)

    def deliver_signal(self, handle_ref, payload) -> str:
        """Record one confirmation signal; returns an acknowledgment code."""
        handle_id = _handle_id_from_ref(handle_ref)
        handle = self.handles.get(handle_id)
        if handle is None:
            raise NotFoundError(f"unknown wait handle {handle_id!r}")
        payload = self._validate_signal_payload(payload)
        condition = self.conditions.get(handle_id)
        if condition is not None and condition.outcome != "PENDING":
            self.core.emit(
                "wait.signal.ignored", handle_id,
                handle=handle_id, reason="already resolved",
            )
            return "ignored-already-resolved"
        signal_id = payload.get("id") or str(len(handle.signals) + 1)
        handle.signals[signal_id] = payload
        self.core.emit(
            "wait.signal", handle_id,
            handle=handle_id, id=signal_id, status=payload["status"],
        )
        if condition is not None:
            self._evaluate_condition(condition)
            if condition.outcome != "PENDING":
                self._resolve_blocked_wait(condition)
        return "recorded"

    @staticmethod
    def _validate_signal_payload(payload) -> dict:
        if not isinstance(payload, dict):
            raise TemplateError("signal payload must be a JSON object")
        unknown = set(payload) - {"status", "id", "data"}
        if unknown:
            raise TemplateError(f"signal payload has unknown fields: {sorted(unknown)}")
        status = payload.get("status")
        if status not in ("SUCCESS", "FAILURE"):
            raise TemplateError("signal status must be SUCCESS or FAILURE")
        for key in ("id", "data"):
            if key in payload and not isinstance(payload[key], str):
                raise TemplateError(f"signal {key} must be a string")
        return payload

    def _evaluate_condition(self, condition: WaitCondition):
        if condition.outcome != "PENDING":
            return
        handle = self.handles[condition.handle_id]
        statuses = [p["status"] for p in handle.signals.values()]
        if any(s == "FAILURE" for s in statuses):
            condition.outcome = "FAILURE_SIGNALED"
        elif sum(1 for s in statuses if s == "SUCCESS") >= condition.required:
            condition.outcome = "SUCCESS"

    def _wait_data(self, handle: WaitHandle) -> str:
        return json.dumps(
            {sid: p.get("data", "") for sid, p in handle.signals.items() if p["status"] == "SUCCESS"}
        )

    def _complete_wait_record(self, record, condition: WaitCondition):
        handle = self.handles[condition.handle_id]
        record.attributes = {"data": self._wait_data(handle)}
        self.core.emit(
            "wait.success", condition.handle_id,
            stack=condition.stack_id, resource=condition.resource_name, handle=condition.handle_id,
        )
        return record

    def _resolve_blocked_wait(self, condition: WaitCondition):
        """A pending condition just left PENDING; resume or fail its stack."""
        run = self.runs.get(condition.stack_id)
        if run is None or run.blocker != ["wait", condition.handle_id]:
            return
        stack = self.stacks[condition.stack_id]
        run.blocker = None
        record = stack.records[condition.resource_name]
        if condition.outcome == "SUCCESS":
            self._complete_wait_record(record, condition)
            self._complete_resource(stack, record)
            run.pos_idx += 1
            self._pump_run(run)
        elif condition.outcome == "FAILURE_SIGNALED":
            self.core.emit(
                "wait.failure", condition.handle_id,
                stack=stack.id, resource=condition.resource_name, handle=condition.handle_id,
            )
            self._fail_resource(run, stack, condition.resource_name, "wait condition received a FAILURE signal")
        else:
            self.core.emit(
                "wait.timeout", condition.handle_id,
                stack=stack.id, resource=condition.resource_name, handle=condition.handle_id,
            )
            self._fail_resource(run, stack, condition.resource_name, "wait condition timed out")

    def process_deadlines(self):
        """Called once per tick, before alarms and the healer."""
        for condition in list(self.conditions.values()):
            if condition.outcome == "PENDING" and condition.deadline <= self.core.tick:
                condition.outcome = "TIMEOUT"
                self._resolve_blocked_wait(condition)

    # -- delete ----------------------------------------------------------------------------------

    def delete_stack(self, stack_id, token) -> str:
        claims = self.identity.require(token, "stacks:delete")
        stack = self._scoped_stack(stack_id, claims)
        if stack.status in (CREATE_IN_PROGRESS, DELETE_IN_PROGRESS):
            raise ConflictError(f"stack is {stack.status}; wait for a terminal status")
        if stack.status == DELETE_COMPLETE:
            raise ConflictError("stack is already deleted")
        return self._delete(stack, token)

    def _delete(self, stack: Stack, token) -> str:
        stack.status = DELETE_IN_PROGRESS
        self.core.emit("stack.delete.start", stack.id, stack=stack.id, name=stack.name)
        problems = []
        for wave in reversed(stack.waves):
            for rname in reversed(wave):
                record = stack.records.get(rname)
                if record is None or record.state == "DELETED":
                    continue
                try:
                    self._destroy_resource(stack, record, token)
                    record.state = "DELETED"
                except MiniManoError as exc:
                    record.failure = exc.message
                    problems.append(f"{rname}: {exc.message}")
        if problems:
            stack.status = DELETE_FAILED
            stack.failure_reason = "; ".join(problems)
            self.core.emit("stack.delete.failed", stack.id, stack=stack.id, reason=stack.failure_reason)
        else:
            stack.status = DELETE_COMPLETE
            self.core.emit("stack.delete.complete", stack.id, stack=stack.id, name=stack.name)
        return stack.status

    def _destroy_resource(self, stack, record, token):
        if record.type == SERVER_TYPE:
            if record.physical_id is not None:
                try:
                    self.provider.terminate_instance(record.physical_id)
                except NotFoundError:
                    pass  # already gone
        elif is_nested_type(record.type):
            if record.physical_id is not None and record.physical_id in self.stacks:
                child = self.stacks[record.physical_id]
                if child.status not in (DELETE_COMPLETE,):
                    result = self._delete(child, token)
                    if result != DELETE_COMPLETE:
                        raise DeployError(f"nested stack delete failed: {child.failure_reason}")
        elif record.type == WAIT_HANDLE_TYPE:
            self.handles.pop(record.uuid, None)
            self.conditions.pop(record.uuid, None)
        # random strings and wait conditions hold no provider state

    # -- read side ----------------------------------------------------------------------------------

    def _scoped_stack(self, stack_id, claims) -> Stack:
        stack = self.stacks.get(stack_id)
        if stack is None or stack.tenant_id != claims.tenant_id:
            # a foreign stack is indistinguishable from a missing one
            raise NotFoundError(f"stack {stack_id!r} not found")
        return stack

    def list_stacks(self, token) -> list:
        claims = self.identity.require(token, "stacks:list")
        return [
            {"id": s.id, "name": s.name, "status": s.status, "created_at": s.created_at}
            for s in self.stacks.values()
            if s.tenant_id == claims.tenant_id and s.status != DELETE_COMPLETE
        ]

    def show_stack(self, stack_id, token) -> dict:
        claims = self.identity.require(token, "stacks:show")
        stack = self._scoped_stack(stack_id, claims)
        return self.stack_detail(stack)

    @staticmethod
    def stack_detail(stack: Stack) -> dict:
        return {
            "id": stack.id,
            "name": stack.name,
            "status": stack.status,
            "created_at": stack.created_at,
            "parameters": dict(stack.bound),
            "outputs": dict(stack.outputs),
            "parent": list(stack.parent) if stack.parent else None,
            "failure_reason": stack.failure_reason,
            "resources": {
                name: {
                    "id": r.uuid,
                    "type": r.type,
                    "state": r.state,
                    "attributes": dict(r.attributes),
                    "failure": r.failure,
                }
                for name, r in stack.records.items()
            },
        }

    # -- persistence ------------------------------------------------------------------------------------

    def to_dict(self):
        return {
            "stacks": [
                {
                    "id": s.id,
                    "name": s.name,
                    "tenant_id": s.tenant_id,
                    "status": s.status,
                    "source": s.source,
                    "bound": s.bound,
                    "waves": s.waves,
                    "records": [vars(r).copy() for r in s.records.values()],
                    "outputs": s.outputs,
                    "parent": list(s.parent) if s.parent else None,
                    "depth": s.depth,
                    "created_at": s.created_at,
                    "failure_reason": s.failure_reason,
                }
                for s in self.stacks.values()
            ],
            "runs": [vars(r).copy() for r in self.runs.values()],
            "handles": [
                {"id": h.id, "stack_id": h.stack_id, "resource_name": h.resource_name,
                 "signals": h.signals}
                for h in self.handles.values()
            ],
            "conditions": [vars(c).copy() for c in self.conditions.values()],
        }

    def load_dict(self, data):
        self.stacks = {}
        for s in data["stacks"]:
            doc = parse_template(s["source"])
            stack = Stack(
                id=s["id"],
                name=s["name"],
                tenant_id=s["tenant_id"],
                status=s["status"],
                doc=doc,
                source=s["source"],
                bound=s["bound"],
                waves=s["waves"],
                outputs=s["outputs"],
                parent=tuple(s["parent"]) if s["parent"] else None,
                depth=s["depth"],
                created_at=s["created_at"],
                failure_reason=s["failure_reason"],
            )
            for r in s["records"]:
                stack.records[r["name"]] = ResourceRecord(**r)
            self.stacks[stack.id] = stack
        self.runs = {}
        for r in data["runs"]:
            run = StackRun(**r)
            self.runs[run.stack_id] = run
        self.handles = {h["id"]: WaitHandle(**h) for h in data["handles"]}
        self.conditions = {c["handle_id"]: WaitCondition(**c) for c in data["conditions"]}
