from rest_framework import serializers
from rest_framework.fields import empty

from evidence_app.api.serializers import EvidenceRecordSerializer, StrictSerializer
from ledger_app.chain import LedgerBlock


class DigestField(serializers.RegexField):
    """32-byte digest written as 64 lowercase hex characters."""

    def __init__(self, **kwargs):
        super().__init__(r'^[0-9a-f]{64}$', **kwargs)

    def run_validation(self, data=empty):
        # The regex validators see the hex text; bytes only once it passed.
        value = super().run_validation(data)
        return None if value is None else bytes.fromhex(value)

    def to_representation(self, value):
        return value.hex()


class LedgerBlockSerializer(StrictSerializer):
    """
    Serializer for one line of the ledger file.

    Validation only checks shape; hashes and links are checked by
    ``LedgerService.verify_chain``.
    """
    index = serializers.IntegerField(min_value=0)
    timestamp = serializers.IntegerField(min_value=0)
    prev_hash = DigestField()
    payload = EvidenceRecordSerializer(many=True)
    block_hash = DigestField()

    def to_representation(self, instance):
        return instance.to_dict()

    def create(self, validated_data):
        records = [EvidenceRecordSerializer().create(item) for item in validated_data['payload']]
        return LedgerBlock(
            index=validated_data['index'],
            timestamp=validated_data['timestamp'],
            prev_hash=validated_data['prev_hash'],
            payload=tuple(records),
            block_hash=validated_data['block_hash'],
        )


class ChainReportSerializer(serializers.Serializer):
    """Read-only representation of a chain audit."""
    valid = serializers.BooleanField()
    blocks = serializers.IntegerField()
    block_index = serializers.IntegerField(allow_null=True)
    reason = serializers.CharField(allow_null=True)
