from rest_framework import serializers

from evidence_app.api.serializers import HexIntegerField, StrictSerializer
from evidence_app.exceptions import DecodeError
from evidence_app.group import GroupElement, Scalar, int_to_hex
from proof_app.protocol import Challenge, Commitment, ProofTranscript, Response, RoundTranscript, Verdict


VERDICTS = [verdict.value for verdict in Verdict]


class ChallengeBitField(serializers.Field):
    """Challenge bit: the JSON integer 0 or 1, nothing that merely converts to one."""
    default_error_messages = {
        'invalid': 'Expected the integer 0 or 1.',
    }

    def to_representation(self, value):
        return int(value)

    def to_internal_value(self, data):
        # bool is an int subclass
        if type(data) is not int or data not in (0, 1):
            self.fail('invalid')
        return data


class RoundTranscriptSerializer(StrictSerializer):
    """One round of a transcript: commitment s, challenge bit i, response z, verdict."""
    s = HexIntegerField()
    i = ChallengeBitField()
    z = HexIntegerField()
    verdict = serializers.ChoiceField(choices=VERDICTS)

    def to_representation(self, instance):
        return {
            's': int_to_hex(instance.commitment.s),
            'i': instance.challenge.i,
            'z': int_to_hex(instance.response.z),
            'verdict': instance.verdict.value,
        }

    def create(self, validated_data):
        return RoundTranscript(
            commitment=Commitment(GroupElement(validated_data['s'])),
            challenge=Challenge(validated_data['i']),
            response=Response(Scalar(validated_data['z'])),
            verdict=Verdict(validated_data['verdict']),
        )


class ProofTranscriptSerializer(StrictSerializer):
    """
    Serializer for ProofTranscript files.

    The representation is canonical JSON with hex big integers so a third
    party can re-verify it offline against the ledger's evidence.
    """
    contract_id = serializers.CharField(allow_blank=False, trim_whitespace=False)
    target = serializers.CharField(allow_null=True, allow_blank=False, trim_whitespace=False)
    k = serializers.IntegerField(min_value=1)
    overall = serializers.ChoiceField(choices=VERDICTS)
    rounds = RoundTranscriptSerializer(many=True)

    def to_representation(self, instance):
        return {
            'contract_id': instance.contract_id,
            'target': instance.target,
            'k': instance.k,
            'overall': instance.overall.value,
            'rounds': [RoundTranscriptSerializer(rnd).data for rnd in instance.rounds],
        }

    def validate(self, attrs):
        if len(attrs['rounds']) > attrs['k']:
            raise serializers.ValidationError('Transcript holds more rounds than k.')
        return attrs

    def create(self, validated_data):
        transcript = ProofTranscript(
            contract_id=validated_data['contract_id'],
            target=validated_data['target'],
            k=validated_data['k'],
            rounds=tuple(RoundTranscriptSerializer().create(item) for item in validated_data['rounds']),
        )
        if transcript.overall.value != validated_data['overall']:
            raise DecodeError('Overall verdict does not match the round verdicts.')
        return transcript


def parse_transcript(data) -> ProofTranscript:
    """
    Build a ProofTranscript from decoded JSON.

    Raises:
        DecodeError: If the data does not match the transcript schema
    """
    serializer = ProofTranscriptSerializer(data=data)
    if not serializer.is_valid():
        raise DecodeError(f"Invalid transcript: {serializer.errors}")
    return serializer.save()


class HelloBodySerializer(StrictSerializer):
    """Prover opens with contract_id, target and an optional round request; the verifier echoes the effective k."""
    contract_id = serializers.CharField(allow_blank=False, trim_whitespace=False, max_length=256)
    target = serializers.CharField(allow_null=True, allow_blank=False, trim_whitespace=False, max_length=256)
    k = serializers.IntegerField(allow_null=True, min_value=1, max_value=4096)


class CommitBodySerializer(StrictSerializer):
    s = HexIntegerField()


class ChallengeBodySerializer(StrictSerializer):
    i = ChallengeBitField()


class ResponseBodySerializer(StrictSerializer):
    z = HexIntegerField()


class VerdictBodySerializer(StrictSerializer):
    verdict = serializers.ChoiceField(choices=VERDICTS)


class AbortBodySerializer(StrictSerializer):
    reason = serializers.CharField(allow_blank=False, max_length=1024)


BODY_SERIALIZERS = {
    'hello': HelloBodySerializer,
    'commit': CommitBodySerializer,
    'challenge': ChallengeBodySerializer,
    'response': ResponseBodySerializer,
    'round-result': VerdictBodySerializer,
    'final-result': VerdictBodySerializer,
    'abort': AbortBodySerializer,
}


class WireEnvelopeSerializer(StrictSerializer):
    """Fields common to every wire message; the body is checked per kind."""
    kind = serializers.ChoiceField(choices=list(BODY_SERIALIZERS))
    session_id = serializers.RegexField(r'^[0-9a-f]{32}$')
    round = serializers.IntegerField(min_value=0)
    body = serializers.DictField()


class TranscriptReportSerializer(serializers.Serializer):
    valid = serializers.BooleanField()
    accepted = serializers.BooleanField()
    consistent = serializers.BooleanField()
    rounds_checked = serializers.IntegerField()
    mismatched_rounds = serializers.ListField(child=serializers.IntegerField())
    reason = serializers.CharField(allow_null=True)


class CheaterReportSerializer(serializers.Serializer):
    k = serializers.IntegerField()
    trials = serializers.IntegerField()
    rounds_total = serializers.IntegerField()
    rounds_accepted = serializers.IntegerField()
    proofs_accepted = serializers.IntegerField()
    round_rate = serializers.FloatField()
    overall_rate = serializers.FloatField()
    bound = serializers.FloatField()
