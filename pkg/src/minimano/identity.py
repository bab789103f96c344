"""Identity, roles, tokens, policy, and the service catalog.

Every managed object in the system belongs to exactly one tenant, and a
user acts inside a tenant only through a role assignment. Tokens are
opaque ids scoped to a single tenant; authorization consults a policy
table mapping action names to the role they require ("any" accepts every
valid token). Unknown actions are denied.
"""

import hashlib
from dataclasses import dataclass, field

from .errors import AuthError, ConflictError, NotFoundError

DEFAULT_TOKEN_TTL = 3600  # ticks

_MEMBER_ACTIONS = [
    "stacks:create",
    "stacks:delete",
    "stacks:list",
    "stacks:show",
    "stacks:signal",
    "images:create",
    "flavors:create",
    "keypairs:create",
    "secgroups:create",
    "secgroups:rule_add",
    "networks:create",
    "routers:create",
    "routers:attach",
    "routers:gateway",
    "fips:allocate",
    "fips:associate",
    "fips:disassociate",
    "fips:release",
    "volumes:create",
    "volumes:attach",
    "volumes:detach",
    "volumes:snapshot",
    "objects:put",
    "objects:get",
    "connectivity:check",
    "telemetry:record",
    "alarms:create",
    "groups:create",
    "faults:inject",
    "clock:advance",
    "events:read",
]

_ADMIN_ACTIONS = [
    "identity:create_tenant",
    "identity:create_user",
    "identity:assign_role",
    "identity:register_service",
]


def default_policy() -> dict:
    policy = {action: "member" for action in _MEMBER_ACTIONS}
    policy.update({action: "admin" for action in _ADMIN_ACTIONS})
    policy["identity:lookup_endpoint"] = "any"
    return policy


@dataclass
class Tenant:
    id: str
    name: str


@dataclass
class User:
    id: str
    name: str
    salt: str
    digest: str


@dataclass
class Token:
    id: str
    user_id: str
    tenant_id: str
    roles: list
    expires_at: int


@dataclass
class Endpoint:
    url: str
    registered_at: int


@dataclass
class IdentityState:
    tenants: dict = field(default_factory=dict)  # id -> Tenant
    users: dict = field(default_factory=dict)  # id -> User
    assignments: list = field(default_factory=list)  # (user_id, tenant_id, role)
    tokens: dict = field(default_factory=dict)  # id -> Token
    catalog: dict = field(default_factory=dict)  # service name -> Endpoint
    policy: dict = field(default_factory=dict)  # action -> required role


def _digest(salt: str, credential: str) -> str:
    return hashlib.sha256(f"{salt}:{credential}".encode()).hexdigest()


class IdentityService:
    def __init__(self, core, policy=None):
        self.core = core
        self.state = IdentityState(policy=dict(policy) if policy is not None else default_policy())

    # -- bootstrap ----------------------------------------------------------

    def bootstrap(self, admin_credential: str):
        """Create the initial admin tenant/user and the default services."""
        tenant = self._add_tenant("admin")
        user = self._add_user("admin", admin_credential)
        self.state.assignments.append((user.id, tenant.id, "admin"))
        self.state.assignments.append((user.id, tenant.id, "member"))
        for service in ("identity", "image", "compute", "network", "volume",
                        "object-store", "telemetry", "orchestration"):
            self.state.catalog[service] = Endpoint(
                url=f"local:///{service}", registered_at=self.core.tick
            )

    # -- lookups ------------------------------------------------------------

    def tenant_by_name(self, name):
        for tenant in self.state.tenants.values():
            if tenant.name == name:
                return tenant
        return None

    def user_by_name(self, name):
        for user in self.state.users.values():
            if user.name == name:
                return user
        return None

    def roles_for(self, user_id, tenant_id):
        return [r for (u, t, r) in self.state.assignments if u == user_id and t == tenant_id]

    # -- admin-gated writes ---------------------------------------------------

    def _add_tenant(self, name):
        if self.tenant_by_name(name) is not None:
            raise ConflictError(f"tenant {name!r} already exists")
        tenant = Tenant(id=self.core.new_uuid(), name=name)
        self.state.tenants[tenant.id] = tenant
        hook = getattr(self.core, "tenant_created", None)
        if hook is not None:
            hook(tenant)
        return tenant

    def _add_user(self, name, credential):
        if self.user_by_name(name) is not None:
            raise ConflictError(f"user {name!r} already exists")
        salt = self.core.new_hex(16)
        user = User(id=self.core.new_uuid(), name=name, salt=salt, digest=_digest(salt, credential))
        self.state.users[user.id] = user
        return user

    def create_tenant(self, name, token_id):
        self.require(token_id, "identity:create_tenant")
        return self._add_tenant(name)

    def create_user(self, name, credential, token_id):
        self.require(token_id, "identity:create_user")
        return self._add_user(name, credential)

    def assign_role(self, user_name, tenant_name, role, token_id):
        self.require(token_id, "identity:assign_role")
        user = self.user_by_name(user_name)
        if user is None:
            raise NotFoundError(f"user {user_name!r} not found")
        tenant = self.tenant_by_name(tenant_name)
        if tenant is None:
            raise NotFoundError(f"tenant {tenant_name!r} not found")
        entry = (user.id, tenant.id, role)
        if entry in self.state.assignments:
            raise ConflictError(f"role {role!r} already assigned")
        self.state.assignments.append(entry)
        return entry

    # -- authentication and authorization -------------------------------------

    def authenticate(self, user_name, credential, tenant_name) -> Token:
        user = self.user_by_name(user_name)
        if user is None or _digest(user.salt, credential) != user.digest:
            # unknown user and wrong credential are indistinguishable
            raise AuthError("invalid user name or credential")
        tenant = self.tenant_by_name(tenant_name)
        if tenant is None:
            raise AuthError(f"no role in tenant {tenant_name!r}")
        roles = self.roles_for(user.id, tenant.id)
        if not roles:
            raise AuthError(f"no role in tenant {tenant_name!r}")
        token = Token(
            id=self.core.new_hex(32),
            user_id=user.id,
            tenant_id=tenant.id,
            roles=sorted(roles),
            expires_at=self.core.tick + DEFAULT_TOKEN_TTL,
        )
        self.state.tokens[token.id] = token
        return token

    def validate_token(self, token_id) -> Token:
        token = self.state.tokens.get(token_id or "")
        if token is None or token.expires_at <= self.core.tick:
            raise AuthError("invalid or expired token")
        return token

    def authorize(self, token_id, action) -> bool:
        try:
            token = self.validate_token(token_id)
        except AuthError:
            return False
        required = self.state.policy.get(action)
        if required is None:
            return False  # unknown actions default to deny
        return required == "any" or required in token.roles

    def require(self, token_id, action) -> Token:
        token = self.validate_token(token_id)
        if not self.authorize(token_id, action):
            raise AuthError(f"not authorized for {action}")
        return token

    # -- service catalog -------------------------------------------------------

    def register_service(self, name, url, token_id):
        self.require(token_id, "identity:register_service")
        self.state.catalog[name] = Endpoint(url=url, registered_at=self.core.tick)

    def lookup_endpoint(self, token_id, name) -> str:
        self.require(token_id, "identity:lookup_endpoint")
        endpoint = self.state.catalog.get(name)
        if endpoint is None:
            raise NotFoundError(f"unknown service {name!r}")
        return endpoint.url

    # -- persistence -------------------------------------------------------------

    def to_dict(self):
        return {
            "tenants": [{"id": t.id, "name": t.name} for t in self.state.tenants.values()],
            "users": [
                {"id": u.id, "name": u.name, "salt": u.salt, "digest": u.digest}
                for u in self.state.users.values()
            ],
            "assignments": [list(a) for a in self.state.assignments],
            "tokens": [
                {
                    "id": t.id,
                    "user_id": t.user_id,
                    "tenant_id": t.tenant_id,
                    "roles": t.roles,
                    "expires_at": t.expires_at,
                }
                for t in self.state.tokens.values()
            ],
            "catalog": {
                name: {"url": e.url, "registered_at": e.registered_at}
                for name, e in self.state.catalog.items()
            },
            "policy": dict(self.state.policy),
        }

    def load_dict(self, data):
        self.state = IdentityState(policy=dict(data["policy"]))
        for t in data["tenants"]:
            self.state.tenants[t["id"]] = Tenant(**t)
        for u in data["users"]:
            self.state.users[u["id"]] = User(**u)
        self.state.assignments = [tuple(a) for a in data["assignments"]]
        for t in data["tokens"]:
            self.state.tokens[t["id"]] = Token(**t)
        for name, e in data["catalog"].items():
            self.state.catalog[name] = Endpoint(**e)
