use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use base64::Engine;
use eclipse_core::attacks::{square_attack_linf, SquareConfig};
use eclipse_core::oracle::{query, Oracle, OracleEndpointConfig, OracleError, Phase, RemoteOracle, SyntheticOracle};
use eclipse_core::synthetic::{Scenario, ScenarioConfig};
use eclipse_core::tensorops::ImageTensor;

struct Request {
    auth: Option<String>,
    body: serde_json::Value,
}

fn read_request(stream: &mut TcpStream) -> Request {
    let mut reader = BufReader::new(stream);
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            match k.to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap(),
                "authorization" => auth = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Request {
        auth,
        body: serde_json::from_slice(&body).unwrap(),
    }
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
}

fn decode_image(req: &Request) -> ImageTensor {
    let b64 = req.body["image_b64"].as_str().unwrap();
    let png = base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
    let rgb = image::load_from_memory(&png).unwrap().to_rgb8();
    ImageTensor::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw()).unwrap()
}

/// Serves the synthetic victim over HTTP, truncated to the requested top-k,
/// and answers `401` unless the bearer token matches.
fn serve(oracle: SyntheticOracle, token: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/classify", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let req = read_request(&mut stream);
            if req.auth.as_deref() != Some(&format!("Bearer {token}")) {
                respond(&mut stream, "401 Unauthorized", "{}");
                continue;
            }
            let k = req.body["top_k"].as_u64().unwrap() as usize;
            let scores = oracle.clone().with_top_k(k).confidences(&decode_image(&req)).unwrap();
            respond(&mut stream, "200 OK", &serde_json::json!({ "scores": scores.scores() }).to_string());
        }
    });
    url
}

fn scenario() -> Scenario {
    Scenario::new(ScenarioConfig {
        labels: 4,
        ..Default::default()
    })
    .unwrap()
}

fn endpoint(url: &str, token: Option<&str>, top_k: usize) -> RemoteOracle {
    RemoteOracle::new(OracleEndpointConfig {
        top_k,
        auth_token: token.map(str::to_string),
        ..OracleEndpointConfig::new(url)
    })
    .unwrap()
}

#[test]
fn remote_scores_match_the_local_oracle_up_to_png_quantization() {
    let sc = scenario();
    let url = serve(sc.victim_oracle(), "s3cret");
    let remote = endpoint(&url, Some("s3cret"), 5);
    let local = sc.victim_oracle();
    for item in sc.corpus(2, 0) {
        let quantized = ImageTensor::from_rgb8(16, 16, &item.image.to_rgb8()).unwrap();
        let r = remote.confidences(&item.image).unwrap();
        let l = local.confidences(&quantized).unwrap();
        assert_eq!(r, l);
    }
}

#[test]
fn labels_cut_by_top_k_read_as_zero() {
    let sc = scenario();
    let url = serve(sc.victim_oracle(), "t");
    let remote = endpoint(&url, Some("t"), 1);
    let item = &sc.corpus(1, 0)[0];
    let r = remote.confidences(&item.image).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r.top_label(), "cat");
    assert_eq!(query(&remote, &item.image, "dog", Phase::Other).unwrap(), 0.0);
}

#[test]
fn missing_token_surfaces_the_status() {
    let sc = scenario();
    let url = serve(sc.victim_oracle(), "t");
    let remote = endpoint(&url, None, 5);
    let err = remote.confidences(&ImageTensor::filled(16, 16, 0.5).unwrap()).unwrap_err();
    assert!(matches!(err, OracleError::Status(401)), "{err:?}");
}

#[test]
fn attacks_run_against_the_endpoint() {
    let sc = scenario();
    let url = serve(sc.victim_oracle(), "t");
    let remote = endpoint(&url, Some("t"), 5);
    let item = &sc.corpus(1, 1)[0];
    let out = square_attack_linf(&remote, &item.image, "dog", &SquareConfig::default()).unwrap();
    assert!(out.success);
}

#[test]
fn slow_and_absent_servers_are_reported() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let _held = stream.unwrap();
            thread::sleep(Duration::from_secs(2));
        }
    });
    let slow = RemoteOracle::new(OracleEndpointConfig {
        timeout_secs: 0.2,
        ..OracleEndpointConfig::new(url)
    })
    .unwrap();
    let img = ImageTensor::filled(4, 4, 0.5).unwrap();
    assert!(matches!(slow.confidences(&img), Err(OracleError::Timeout)));

    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let absent = endpoint(&format!("http://127.0.0.1:{port}/"), None, 5);
    assert!(matches!(absent.confidences(&img), Err(OracleError::Transport(_))));
}

#[test]
fn malformed_bodies_are_schema_errors() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            read_request(&mut stream);
            respond(&mut stream, "200 OK", r#"{"scores": {"cat": 1.5}}"#);
        }
    });
    let remote = endpoint(&url, None, 5);
    let err = remote.confidences(&ImageTensor::filled(4, 4, 0.5).unwrap()).unwrap_err();
    assert!(matches!(err, OracleError::Schema(_)), "{err:?}");
}
