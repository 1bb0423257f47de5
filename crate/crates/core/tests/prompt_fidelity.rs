use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use policygame::agents::{build_chat_request, Agent, AgentError, AgentKind, AgentSpec, DecisionContext, RemoteSpec, RetryPolicy};
use policygame::game::{Action, Role};
use policygame::prompting::{Condition, PromptBuilder, NEUTRAL_DESCRIPTION};
use policygame::scenarios::debt_crisis;

const GOLDEN: &[(&str, &str)] =
    &[("hidden+persona", "default_hidden"), ("hidden+nopersona", "off_hidden"), ("visible+persona", "default_visible")];

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn messages_match_golden_files() {
    let builder = PromptBuilder::default();
    let scenario = debt_crisis();
    for (cond, file) in GOLDEN {
        let c: Condition = cond.parse().unwrap();
        let p = builder.build_prompt(&scenario, Role::Industrialist, &c, &[]).unwrap();
        assert_eq!(p.system_text, golden(&format!("{file}.system.txt")), "{cond} system");
        assert_eq!(p.user_text, golden(&format!("{file}.user.txt")), "{cond} user");
    }
}

#[test]
fn golden_files_carry_required_phrases() {
    let off = golden("off_hidden.system.txt");
    assert!(off.contains("You are a player in a strategic game."));
    assert!(off.contains(NEUTRAL_DESCRIPTION));
    assert!(!off.contains("manufacturing conglomerate"));
    assert!(golden("default_hidden.system.txt")
        .contains("You run a major manufacturing conglomerate balancing profits and public scrutiny."));
    let hidden = golden("default_hidden.user.txt");
    assert!(!hidden.chars().any(|c| c.is_ascii_digit()), "hidden prompt leaks numbers");
    let visible = golden("default_visible.user.txt");
    assert!(visible.contains("POLLUTE NO_REG NO_CAM BUY_CHEAP 15.0\n"));
    assert!(visible.contains("CLEAN NO_REG NO_CAM BUY_CHEAP -0.5\n"));
    for text in [hidden, visible] {
        assert!(text.contains("- POLLUTE: Maximize profit via lax pollution controls\n"));
        assert!(text.ends_with("Respond in JSON exactly as:\n{\n  \"action\": \"<KEY>\",\n  \"rationale\": \"<short explanation>\"\n}"));
    }
}

#[test]
fn request_carries_default_decoding() {
    let builder = PromptBuilder::default();
    let p = builder.build_prompt(&debt_crisis(), Role::Government, &Condition::base_grid()[0], &[]).unwrap();
    let req = build_chat_request(&RemoteSpec::new("http://x/v1", "m"), &p, None);
    let v = serde_json::to_value(&req).unwrap();
    assert_eq!(v["temperature"], 0.2);
    assert_eq!(v["top_p"], 0.9);
    assert_eq!(v["max_tokens"], 256);
    assert_eq!(v["messages"][0]["role"], "system");
    assert_eq!(v["messages"][0]["content"], p.system_text);
    assert_eq!(v["messages"][1]["content"], p.user_text);
    assert!(v.get("seed").is_none());
}

struct Captured {
    path: String,
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Serves one canned chat completion per connection, in order, and records
/// what it received.
fn mock_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>, thread::JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = thread::spawn(move || {
        for (status, content) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Captured {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                headers,
                body: serde_json::from_slice(&body).unwrap(),
            });
            let payload = if status == 200 {
                serde_json::json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }] })
                    .to_string()
            } else {
                content
            };
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
            out.flush().unwrap();
        }
    });
    (url, seen, handle)
}

fn remote_agent(url: &str) -> Agent {
    let mut spec = RemoteSpec::new(url, "mock-model");
    spec.api_key_env = "POLICYGAME_TEST_KEY_THAT_IS_NEVER_SET".into();
    spec.timeout_secs = 10;
    Agent::new(AgentSpec::new("mock", AgentKind::RemoteLlm(spec))).with_retry(RetryPolicy::immediate())
}

#[test]
fn remote_agent_sends_bundle_over_http() {
    let (url, seen, handle) = mock_server(vec![
        (200, "I think I will not answer in JSON.".into()),
        (500, "{\"error\":\"overloaded\"}".into()),
        (200, "Sure. {\"action\": \"clean\", \"rationale\": \"long-term payoff\"}".into()),
    ]);
    let agent = remote_agent(&url);
    let scenario = debt_crisis();
    let cond: Condition = "visible+persona".parse().unwrap();
    let bundle = PromptBuilder::default().build_prompt(&scenario, Role::Industrialist, &cond, &[]).unwrap();
    let reply = agent.decide(Role::Industrialist, &bundle, &scenario, DecisionContext { repetition: 0, seed: 42 }).unwrap();
    handle.join().unwrap();

    assert_eq!(reply.action, Action::CLEAN);
    assert_eq!(reply.rationale, "long-term payoff");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    for c in seen.iter() {
        assert_eq!(c.path, "/v1/chat/completions");
        assert!(!c.headers.iter().any(|h| h.to_ascii_lowercase().starts_with("authorization")));
        assert_eq!(c.body["model"], "mock-model");
        assert_eq!(c.body["messages"][0]["content"], bundle.system_text);
        assert_eq!(c.body["messages"][1]["content"], bundle.user_text);
        assert_eq!(c.body["temperature"], 0.2);
        assert_eq!(c.body["top_p"], 0.9);
        assert_eq!(c.body["max_tokens"], 256);
        assert_eq!(c.body["seed"], 42);
    }
}

#[test]
fn remote_agent_gives_up_after_four_bad_replies() {
    let (url, seen, handle) = mock_server(vec![(200, "{\"action\": \"FLY\"}".into()); 4]);
    let agent = remote_agent(&url);
    let scenario = debt_crisis();
    let bundle = PromptBuilder::default().build_prompt(&scenario, Role::Citizen, &Condition::base_grid()[1], &[]).unwrap();
    let err = agent.decide(Role::Citizen, &bundle, &scenario, DecisionContext { repetition: 1, seed: 7 }).unwrap_err();
    handle.join().unwrap();
    match err {
        AgentError::AgentFailed { attempts, last_raw, .. } => {
            assert_eq!(attempts, 4);
            assert!(last_raw.contains("FLY"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 4);
}
