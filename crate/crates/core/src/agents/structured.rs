use serde::de::DeserializeOwned;

use crate::agents::{system_template, AgentError, Attachment, ChatBackend, ChatRequest};

/// Outcome of checking one decoded reply.
pub(crate) enum Rejection {
    /// Tell the backend what was wrong and ask again.
    Retry(String),
    /// Stop immediately; asking again cannot help.
    Fatal(AgentError),
}

/// Pulls the JSON object out of a reply that may be wrapped in prose or a
/// code fence.
pub(crate) fn extract_json(text: &str) -> &str {
    let trimmed = text.trim();
    match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(start), Some(end)) if start < end => &trimmed[start..=end],
        _ => trimmed,
    }
}

/// Sends a request, decodes the reply as `R` and runs `check`, re-prompting
/// with the violation message on failure.
pub(crate) fn request_structured<R, T>(
    backend: &dyn ChatBackend,
    schema_id: &str,
    user_text: String,
    attachments: Vec<Attachment>,
    mut check: impl FnMut(R) -> Result<T, Rejection>,
) -> Result<T, AgentError>
where
    R: DeserializeOwned,
{
    let system_text = system_template(schema_id)
        .unwrap_or_default()
        .to_owned();
    let attempts = backend.config().max_retries + 1;
    let mut request = ChatRequest {
        system_text,
        user_text: user_text.clone(),
        response_schema_id: schema_id.to_owned(),
        attachments,
    };
    let mut last_raw = String::new();
    let mut last_message = String::new();
    for attempt in 1..=attempts {
        let reply = backend.send(&request)?;
        last_raw = reply.text.clone();
        let violation = match serde_json::from_str::<R>(extract_json(&reply.text)) {
            Ok(decoded) => match check(decoded) {
                Ok(value) => return Ok(value),
                Err(Rejection::Fatal(e)) => return Err(e),
                Err(Rejection::Retry(message)) => message,
            },
            Err(e) => format!("reply is not valid {schema_id} JSON: {e}"),
        };
        tracing::debug!(schema = schema_id, attempt, %violation, "agent reply rejected");
        last_message = violation.clone();
        request.user_text = format!(
            "{user_text}\n\nYour previous reply was rejected: {violation}\nReply again with JSON for schema {schema_id} only."
        );
    }
    Err(AgentError::MalformedAgentOutput {
        schema: schema_id.to_owned(),
        attempts,
        message: last_message,
        raw: last_raw,
    })
}
