"""Revocation oracles plugged into path validation.

Each answers one certificate at a time from a different product: a locally
held CRL, a PCL, or the online OCSP responder.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping

from eidpki.core.certificate import Certificate
from eidpki.core.path import RevocationSource, TrustAnchorSet
from eidpki.core.rng import Rng, system_rng
from eidpki.errors import PkiError
from eidpki.revocation.lists import CRL, PCL, check_status_via_crl, check_status_via_pcl
from eidpki.revocation.ocsp import OcspRequest, accept_response

CaLookup = Callable[[str], "Certificate | None"]


class _SignerKeys:
    def __init__(self, ca_lookup: CaLookup, anchors: TrustAnchorSet) -> None:
        self.ca_lookup = ca_lookup
        self.anchors = anchors

    def allowed_signers(self, ca_id: str) -> set[str]:
        """The CA itself, or its direct issuer for delegated status products."""
        allowed = {ca_id}
        ca_cert = self.ca_lookup(ca_id)
        if ca_cert is not None:
            allowed.add(ca_cert.issuer_id)
        return allowed

    def key_of(self, signer_id: str) -> tuple[str, bytes]:
        anchor = self.anchors.get(signer_id)
        if anchor is not None:
            return anchor.scheme_id, anchor.public_key
        cert = self.ca_lookup(signer_id)
        if cert is None:
            raise PkiError("no-path", f"no certificate for status signer {signer_id}")
        return cert.scheme_id, cert.public_key


class CrlOracle(_SignerKeys):
    source = RevocationSource.CRL

    def __init__(self, crls: Mapping[str, CRL], ca_lookup: CaLookup, anchors: TrustAnchorSet) -> None:
        super().__init__(ca_lookup, anchors)
        self.crls = crls

    def status(self, cert: Certificate, at_time: int) -> str:
        crl = self.crls.get(cert.issuer_id)
        if crl is None:
            raise PkiError("crl-missing", f"no CRL held for {cert.issuer_id}")
        if crl.signer_id not in self.allowed_signers(cert.issuer_id):
            raise PkiError("crl-invalid", f"{crl.signer_id} may not sign for {cert.issuer_id}")
        scheme_id, key = self.key_of(crl.signer_id)
        if scheme_id != crl.scheme_id:
            raise PkiError("crl-invalid", "scheme mismatch")
        return check_status_via_crl(cert.serial, crl, cert, at_time, key).value


class PclOracle(_SignerKeys):
    source = RevocationSource.PCL

    def __init__(self, pcls: Mapping[str, PCL], ca_lookup: CaLookup, anchors: TrustAnchorSet) -> None:
        super().__init__(ca_lookup, anchors)
        self.pcls = pcls

    def status(self, cert: Certificate, at_time: int) -> str:
        pcl = self.pcls.get(cert.issuer_id)
        if pcl is None:
            raise PkiError("pcl-missing", f"no PCL held for {cert.issuer_id}")
        if pcl.signer_id not in self.allowed_signers(cert.issuer_id):
            raise PkiError("pcl-invalid", f"{pcl.signer_id} may not sign for {cert.issuer_id}")
        _, key = self.key_of(pcl.signer_id)
        return check_status_via_pcl(cert.serial, pcl, cert, at_time, key).value


class OcspOracle(_SignerKeys):
    source = RevocationSource.OCSP

    def __init__(self, services, ca_lookup: CaLookup, anchors: TrustAnchorSet, rng: Rng = system_rng) -> None:
        super().__init__(ca_lookup, anchors)
        self.services = services
        self.rng = rng

    def status(self, cert: Certificate, at_time: int) -> str:
        request = OcspRequest.new(cert.issuer_id, cert.serial, self.rng)
        response = self.services.ocsp_check(request)
        allowed = self.allowed_signers(cert.issuer_id)
        if response.responder_id not in allowed:
            raise PkiError("ocsp-invalid", f"responder {response.responder_id} not authorized")
        _, key = self.key_of(response.responder_id)
        return accept_response(request, response, key, allowed).value
