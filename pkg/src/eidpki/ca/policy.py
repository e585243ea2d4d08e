"""Certificate policy records (CP/CPS documents attached to each CA)."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

from eidpki.core.certificate import Profile
from eidpki.errors import PkiError

# Top-level sections of an RFC 2527 certificate policy / practice statement.
RFC2527_SECTIONS = (
    "1 Introduction",
    "2 General Provisions",
    "3 Identification and Authentication",
    "4 Operational Requirements",
    "5 Physical, Procedural, and Personnel Security Controls",
    "6 Technical Security Controls",
    "7 Certificate and CRL Profiles",
    "8 Specification Administration",
)


@dataclass(frozen=True)
class CertificatePolicy:
    policy_id: str
    title: str
    allowed_profiles: frozenset[Profile]
    max_validity_days: int
    document_text: str = ""
    rfc2527_sections: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "allowed_profiles", frozenset(Profile(p) for p in self.allowed_profiles))
        if not self.allowed_profiles:
            raise PkiError("request-malformed", "policy must allow at least one profile")
        if self.max_validity_days <= 0:
            raise PkiError("request-malformed", "max_validity_days must be positive")

    def allows(self, profile: Profile | str) -> bool:
        return Profile(profile) in self.allowed_profiles

    def check(self, profile: Profile | str, validity_days: int) -> None:
        if not self.allows(profile):
            raise PkiError("policy-violation", f"{self.policy_id} does not allow profile {Profile(profile).value}")
        if validity_days <= 0:
            raise PkiError("invalid-validity", "validity must be positive")
        if validity_days > self.max_validity_days:
            raise PkiError(
                "policy-violation",
                f"{validity_days} days exceeds {self.policy_id} maximum of {self.max_validity_days}",
            )

    def as_dict(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "title": self.title,
            "allowed_profiles": sorted(p.value for p in self.allowed_profiles),
            "max_validity_days": self.max_validity_days,
            "document_text": self.document_text,
            "rfc2527_sections": dict(self.rfc2527_sections),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CertificatePolicy":
        return cls(
            d["policy_id"],
            d["title"],
            frozenset(d["allowed_profiles"]),
            int(d["max_validity_days"]),
            d.get("document_text", ""),
            dict(d.get("rfc2527_sections", {})),
        )


def _skeleton(scope: str) -> dict[str, str]:
    return {name: f"{scope}: see section {name.split()[0]} of the practice statement." for name in RFC2527_SECTIONS}


ROOT_POLICY = "eid-root-cp"
POPULATION_POLICY = "eid-population-cp"
SUBCA_POLICY = "eid-subca-cp"

END_ENTITY_PROFILES = frozenset(
    {Profile.IDENTITY_AUTH, Profile.SIGNATURE, Profile.ENCRYPTION, Profile.ATTRIBUTE, Profile.DEVICE}
)


def default_policies() -> list[CertificatePolicy]:
    return [
        CertificatePolicy(
            ROOT_POLICY,
            "Government Root CA certificate policy",
            frozenset({Profile.CA, Profile.DEVICE}),
            7300,
            "Governs the root CA and the certificates it issues to subordinate authorities and services.",
            _skeleton("Root CA"),
        ),
        CertificatePolicy(
            POPULATION_POLICY,
            "Population CA certificate policy",
            END_ENTITY_PROFILES | {Profile.CA},
            3650,
            "Governs identity, signature, encryption and attribute certificates on national ID cards.",
            _skeleton("Population CA"),
        ),
        CertificatePolicy(
            SUBCA_POLICY,
            "E-government sub-CA certificate policy",
            END_ENTITY_PROFILES | {Profile.CA},
            3650,
            "Governs e-government authority CAs certified under the national root.",
            _skeleton("Sub-CA"),
        ),
    ]
