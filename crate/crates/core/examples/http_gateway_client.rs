//! Talking to a real `/v1` gateway.
//!
//! Set `RACE_GATEWAY_URL` (and `RACE_API_KEY` if the gateway wants one).
//! The example probes the advertised capabilities and exercises each of
//! them once.
//!
//! ```text
//! RACE_GATEWAY_URL=http://127.0.0.1:8000 cargo run --example http_gateway_client
//! ```

use race_core::gateway::{Capability, GatewayClient, GatewayEndpoint, GenerationConfig, ENV_API_KEY, ENV_GATEWAY_URL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let url = std::env::var(ENV_GATEWAY_URL).unwrap_or_else(|_| "http://127.0.0.1:8000".to_string());
    let mut endpoint = GatewayEndpoint::new(&url);
    endpoint.api_key = std::env::var(ENV_API_KEY).ok();
    endpoint.timeout_secs = 30;
    endpoint.validate()?;
    let gw = GatewayClient::http(&endpoint)?;

    let caps = match gw.capabilities() {
        Ok(caps) => caps,
        Err(e) => {
            eprintln!("gateway at {url} is not reachable: {e}");
            return Ok(());
        }
    };
    println!("{url} serves {caps:?}");

    if caps.contains(&Capability::Generate) {
        let out = gw.generate("What is the capital of France?", &GenerationConfig::greedy(256))?;
        println!("generate: {:?}", out[0].text);
    }
    if caps.contains(&Capability::Embed) {
        let v = gw.embed(&["Paris".to_string(), "paris, France".to_string()])?;
        println!("embed: cosine {:.3}", v[0].cosine(&v[1]));
    }
    if caps.contains(&Capability::Nli) {
        let verdict = gw.nli_probabilities("Paris is the capital of France.", "Lyon is the capital of France.")?;
        println!("nli: contradiction score {:.3}", verdict.contradiction_score());
    }
    if caps.contains(&Capability::ForcedLogprobs) {
        let f = gw.forced_logprobs("Question: capital of France?\nAnswer: ", "Paris")?;
        println!("forced_logprobs: {:?}", f.logprobs);
    }
    println!("ner: {:?}", gw.ner_entities_or_fallback("Marie Curie moved from Warsaw to Paris.")?);
    Ok(())
}
