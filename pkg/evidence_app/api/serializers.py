from rest_framework import serializers

from evidence_app.group import GroupElement, hex_to_int, int_to_hex
from evidence_app.records import EvidenceRecord


class HexIntegerField(serializers.Field):
    """
    Big integer carried as canonical lowercase hex.

    Rejects uppercase digits, leading zeros and anything that is not a
    string, so that parsing and re-serializing is byte-stable.
    """
    default_error_messages = {
        'invalid': 'Expected a canonical lowercase hex integer.',
    }

    def to_representation(self, value):
        return int_to_hex(int(value))

    def to_internal_value(self, data):
        try:
            return hex_to_int(data)
        except ValueError:
            self.fail('invalid')


class StrictSerializer(serializers.Serializer):
    """Serializer that refuses keys it does not declare."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unexpected field.'] for key in unknown})
        return super().to_internal_value(data)


class TermEvidenceSerializer(StrictSerializer):
    """One (label, value) entry of a record's term evidence."""
    label = serializers.CharField(allow_blank=False, trim_whitespace=False)
    value = HexIntegerField()


class EvidenceRecordSerializer(StrictSerializer):
    """
    Serializer for EvidenceRecord.

    The representation is exactly what goes into a ledger block and is
    therefore hashed; it contains only public values.
    """
    contract_id = serializers.CharField(allow_blank=False, trim_whitespace=False, max_length=256)
    e = HexIntegerField()
    term_evidence = TermEvidenceSerializer(many=True)
    params_id = serializers.RegexField(r'^[0-9a-f]{16}$')
    created_at = serializers.IntegerField(min_value=0)

    def to_representation(self, instance):
        return {
            'contract_id': instance.contract_id,
            'e': int_to_hex(instance.e),
            'term_evidence': [
                {'label': label, 'value': int_to_hex(value)} for label, value in instance.term_evidence
            ],
            'params_id': instance.params_id,
            'created_at': instance.created_at,
        }

    def validate_term_evidence(self, value):
        labels = [item['label'] for item in value]
        if len(labels) != len(set(labels)):
            raise serializers.ValidationError('Term labels must be unique.')
        return value

    def create(self, validated_data):
        return EvidenceRecord(
            contract_id=validated_data['contract_id'],
            e=GroupElement(validated_data['e']),
            term_evidence=tuple(
                (item['label'], GroupElement(item['value'])) for item in validated_data['term_evidence']
            ),
            params_id=validated_data['params_id'],
            created_at=validated_data['created_at'],
        )


class RegisterEvidenceSerializer(serializers.Serializer):
    """Validates the register command's inputs before any witness is derived."""
    contract_id = serializers.CharField(allow_blank=False, trim_whitespace=False, max_length=256)
    salt = serializers.CharField(min_length=32, write_only=True)

    def validate_salt(self, value):
        try:
            salt = bytes.fromhex(value)
        except ValueError:
            raise serializers.ValidationError('Salt must be hex encoded.')
        if len(salt) < 16:
            raise serializers.ValidationError('Salt must be at least 16 bytes.')
        return salt
