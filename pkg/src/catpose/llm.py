"""
LLM clients. `HttpLlmClient` talks to an OpenAI style chat completions
endpoint, `ScriptedLlmClient` replays recorded replies keyed on the prompt
hash for offline runs and tests.
"""
import hashlib
import json
import os

import requests
from loguru import logger

from catpose.errors import (AuthError, LlmError, MalformedFileError,
                            NetworkError, StubMissError)

ENDPOINT_ENV = 'CATPOSE_LLM_ENDPOINT'
API_KEY_ENV = 'CATPOSE_LLM_API_KEY'
MODEL_ENV = 'CATPOSE_LLM_MODEL'
DEFAULT_MODEL = 'gpt-4o-mini'
DEFAULT_TIMEOUT = 30


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode('utf-8')).hexdigest()


class LlmClient:

    def send(self, prompt: str) -> str:
        raise NotImplementedError


class HttpLlmClient(LlmClient):

    def __init__(self, endpoint, api_key, model=DEFAULT_MODEL,
                 timeout=DEFAULT_TIMEOUT, temperature=0.0, session=None):
        if not endpoint:
            raise NetworkError("No LLM endpoint configured")
        if not api_key:
            raise AuthError("No LLM API key configured")
        self.endpoint = endpoint
        self._api_key = api_key
        self.model = model
        self.timeout = timeout
        self.temperature = temperature
        self._session = session or requests.Session()

    def __repr__(self):
        return f'<HttpLlmClient {self.model} @ {self.endpoint}>'

    @classmethod
    def from_env(cls, environ=None, **kwargs):
        environ = os.environ if environ is None else environ
        return cls(environ.get(ENDPOINT_ENV), environ.get(API_KEY_ENV),
                   environ.get(MODEL_ENV, DEFAULT_MODEL), **kwargs)

    def send(self, prompt):
        body = {'model': self.model,
                'messages': [{'role': 'user', 'content': prompt}],
                'temperature': self.temperature}
        headers = {'Authorization': f'Bearer {self._api_key}'}
        try:
            response = self._session.post(self.endpoint, json=body,
                                          headers=headers,
                                          timeout=self.timeout)
        except requests.RequestException as e:
            raise NetworkError(f"Request to {self.endpoint} failed: {e}") \
                from e

        if response.status_code in (401, 403):
            raise AuthError(f"LLM endpoint rejected the credentials "
                            f"({response.status_code})")
        try:
            response.raise_for_status()
        except requests.HTTPError as e:
            raise NetworkError(str(e)) from e

        try:
            text = response.json()['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise LlmError(f"Unexpected reply from {self.endpoint}") from e
        logger.debug(f"LLM reply of {len(text)} characters")
        return text


class ScriptedLlmClient(LlmClient):

    def __init__(self, responses=None):
        self.responses = dict(responses or {})
        self.calls = []

    @classmethod
    def from_pairs(cls, pairs):
        return cls({prompt_hash(p): r for p, r in pairs})

    @classmethod
    def from_file(cls, filename):
        """JSON lines with `response` and either `prompt` or
        `prompt_sha256`."""
        responses = {}
        with open(filename, encoding='utf-8') as f:
            for line in f:
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    key = d.get('prompt_sha256') or prompt_hash(d['prompt'])
                    responses[key] = d['response']
                except (json.JSONDecodeError, KeyError, AttributeError) as e:
                    raise MalformedFileError(
                        f"Invalid scripted reply in {filename}: {e}") from e
        logger.debug(f"Loaded {len(responses)} scripted replies from "
                     f"{filename}")
        return cls(responses)

    def __repr__(self):
        return f'<ScriptedLlmClient {len(self.responses)} replies>'

    def send(self, prompt):
        key = prompt_hash(prompt)
        self.calls.append(key)
        try:
            return self.responses[key]
        except KeyError:
            raise StubMissError(f"No scripted reply for prompt {key[:12]}")
