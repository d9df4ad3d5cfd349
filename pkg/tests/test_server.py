import json
import threading
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor

import pytest

from unir.data import parse_corpus
from unir.index import build_flat
from unir.pipeline import embed_pool
from unir.server import SearchService, serve
from unir.store import StoreMode, read_embeddings
from unir.synthgen import SynthConfig, generate
from unir.train import ModelParams


@pytest.fixture(scope="module")
def service_setup(tmp_path_factory):
    out = tmp_path_factory.mktemp("servecorpus")
    config = SynthConfig(
        queries_per_task=6, pool_per_task=30, seed=9,
        n_wrong_modality_distractors=2, n_near_miss=1,
    )
    corpus = generate(config, str(out))
    queries, pool = parse_corpus(corpus.queries_path, corpus.candidates_path)
    raw = read_embeddings(corpus.features_path)
    params = ModelParams.init(StoreMode.SCORE, config.dim, 0)
    store = embed_pool(pool, params, raw)
    index = build_flat(store, params.fusion_weights())
    service = SearchService(index=index, params=params, raw_features=raw)
    return service, queries, store


@pytest.fixture(scope="module")
def server_url(service_setup):
    service, _, _ = service_setup
    httpd = serve(service, "127.0.0.1", 0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    host, port = httpd.server_address[:2]
    yield f"http://{host}:{port}"
    httpd.shutdown()


def post(url, payload, timeout=10):
    data = json.dumps(payload).encode()
    req = urllib.request.Request(
        f"{url}/search", data=data, headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.status, json.loads(resp.read())


def test_healthz(server_url):
    with urllib.request.urlopen(f"{server_url}/healthz", timeout=10) as resp:
        assert resp.status == 200
        assert resp.read() == b"ok"


def test_search_returns_ranked_results(server_url, service_setup):
    _, queries, store = service_setup
    query = next(q for q in queries if q.text)
    status, payload = post(server_url, {"txt": query.text, "k": 5})
    assert status == 200
    results = payload["results"]
    assert 1 <= len(results) <= 5
    scores = [r["score"] for r in results]
    assert scores == sorted(scores, reverse=True)
    assert all(r["did"] in store.ids for r in results)


def test_search_with_instruction_changes_results(server_url, service_setup):
    _, queries, _ = service_setup
    query = next(q for q in queries if q.text)
    _, plain = post(server_url, {"txt": query.text, "k": 10})
    _, instructed = post(
        server_url,
        {"txt": query.text, "instruction": query.instructions[0].text, "k": 10},
    )
    assert plain["results"] != instructed["results"]


def test_search_k_one_single_result(server_url, service_setup):
    _, queries, _ = service_setup
    query = next(q for q in queries if q.text)
    _, payload = post(server_url, {"txt": query.text, "k": 1})
    assert len(payload["results"]) == 1


def test_unknown_img_id_404(server_url):
    try:
        post(server_url, {"img_id": "img:ghost", "k": 3})
        raise AssertionError("expected HTTP 404")
    except urllib.error.HTTPError as exc:
        assert exc.code == 404


def test_malformed_body_400(server_url):
    req = urllib.request.Request(
        f"{server_url}/search", data=b"{not json", headers={"Content-Type": "application/json"}
    )
    try:
        urllib.request.urlopen(req, timeout=10)
        raise AssertionError("expected HTTP 400")
    except urllib.error.HTTPError as exc:
        assert exc.code == 400


def test_bad_k_400(server_url):
    try:
        post(server_url, {"txt": "hello", "k": 0})
        raise AssertionError("expected HTTP 400")
    except urllib.error.HTTPError as exc:
        assert exc.code == 400


def test_empty_query_400(server_url):
    try:
        post(server_url, {"k": 3})
        raise AssertionError("expected HTTP 400")
    except urllib.error.HTTPError as exc:
        assert exc.code == 400


def test_index_not_loaded_503(service_setup):
    service, _, _ = service_setup
    empty = SearchService(index=None, params=service.params)
    httpd = serve(empty, "127.0.0.1", 0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    host, port = httpd.server_address[:2]
    try:
        post(f"http://{host}:{port}", {"txt": "x", "k": 1})
        raise AssertionError("expected HTTP 503")
    except urllib.error.HTTPError as exc:
        assert exc.code == 503
    finally:
        httpd.shutdown()


def test_concurrent_requests_match_sequential(server_url, service_setup):
    _, queries, _ = service_setup
    payloads = []
    for i in range(100):
        q = queries[i % len(queries)]
        body = {"k": 5}
        if q.text:
            body["txt"] = q.text
        if q.image_ref:
            body["img_id"] = q.image_ref
        payloads.append(body)
    sequential = [post(server_url, body)[1] for body in payloads]
    with ThreadPoolExecutor(max_workers=32) as pool:
        concurrent = list(pool.map(lambda body: post(server_url, body)[1], payloads))
    assert concurrent == sequential
