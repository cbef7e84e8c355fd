use super::ScoreValue;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnswerError {
    #[error("no JSON object found in response")]
    NoJson,
    #[error("JSON object has no \"answer\" field")]
    MissingAnswer,
    #[error("\"answer\" is a string; a numeric literal is required")]
    StringAnswer,
    #[error("\"answer\" is not a number: {0}")]
    NotNumeric(String),
    #[error("answer {0} is outside [-1, 1]")]
    OutOfRange(f64),
    #[error("answer is not finite")]
    NonFinite,
}

/// Extract the numeric `answer` from the first well-formed JSON object in a
/// model response. Surrounding prose and code fences are skipped.
pub fn parse_answer(raw: &str) -> Result<ScoreValue, AnswerError> {
    let obj = first_json_object(raw).ok_or(AnswerError::NoJson)?;
    match obj.get("answer") {
        None => Err(AnswerError::MissingAnswer),
        Some(Value::String(_)) => Err(AnswerError::StringAnswer),
        Some(Value::Number(n)) => {
            let v = n.as_f64().ok_or(AnswerError::NonFinite)?;
            ScoreValue::new(v)
        }
        Some(other) => Err(AnswerError::NotNumeric(other.to_string())),
    }
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}
