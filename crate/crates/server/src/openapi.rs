//! OpenAPI description generated from the endpoint table.

use serde_json::{json, Map, Value};

struct Endpoint {
    method: &'static str,
    path: &'static str,
    summary: &'static str,
    /// Example request body, if the endpoint takes one.
    body: Option<fn() -> Value>,
    success: u16,
    errors: &'static [u16],
}

const ENDPOINTS: &[Endpoint] = &[
    Endpoint {
        method: "post",
        path: "/stories",
        summary: "Plan, build and generate a new story",
        body: Some(|| json!({"prompt": "a shy boy finds a lost robot", "n_pages": 10, "seed": 7})),
        success: 201,
        errors: &[400, 409, 502],
    },
    Endpoint {
        method: "get",
        path: "/stories/{id}",
        summary: "Current state, head revision and pending critic findings",
        body: None,
        success: 200,
        errors: &[404],
    },
    Endpoint {
        method: "get",
        path: "/stories/{id}/pages/{pid}/assets/{kind}",
        summary: "Asset bytes (kind: image or narration) with X-Content-Hash",
        body: None,
        success: 200,
        errors: &[404],
    },
    Endpoint {
        method: "post",
        path: "/stories/{id}/pages/{pid}/retry",
        summary: "Regenerate one page, typically after a generation failure",
        body: None,
        success: 200,
        errors: &[404, 409, 412, 502],
    },
    Endpoint {
        method: "post",
        path: "/stories/{id}/edits",
        summary: "Run one edit cycle from free text or structured ops",
        body: Some(|| json!({"text": "Lily has green eyes throughout the story", "mode": "full"})),
        success: 200,
        errors: &[400, 404, 409, 412, 502],
    },
    Endpoint {
        method: "post",
        path: "/stories/{id}/revert",
        summary: "Restore an earlier revision as a new head",
        body: Some(|| json!({"revision": "r0"})),
        success: 200,
        errors: &[400, 404, 409, 412],
    },
    Endpoint {
        method: "get",
        path: "/stories/{id}/history",
        summary: "Revisions with diffs, dirty sets and regenerated pages",
        body: None,
        success: 200,
        errors: &[404],
    },
    Endpoint {
        method: "get",
        path: "/stories/{id}/metrics",
        summary: "Consistency and edit-efficiency reports",
        body: None,
        success: 200,
        errors: &[404],
    },
    Endpoint {
        method: "get",
        path: "/stories/{id}/prompts",
        summary: "Compiled prompt bundle; ?format=interchange for the text format",
        body: None,
        success: 200,
        errors: &[400, 404],
    },
    Endpoint {
        method: "post",
        path: "/stories/{id}/critic/{finding_id}/accept",
        summary: "Apply one surfaced critic fix",
        body: None,
        success: 200,
        errors: &[400, 404, 409, 412, 502],
    },
    Endpoint {
        method: "get",
        path: "/jobs/{id}",
        summary: "Status of a background job (asynchronous mode)",
        body: None,
        success: 200,
        errors: &[404],
    },
];

fn status_text(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        202 => "Accepted (asynchronous mode)",
        304 => "Not modified",
        400 => "Validation error or rejected edit",
        404 => "Unknown story, page, revision or finding",
        409 => "Project locked or story busy",
        412 => "If-Match revision mismatch",
        502 => "Model backend failure",
        _ => "Error",
    }
}

fn path_params(path: &str) -> Vec<Value> {
    path.split('/')
        .filter_map(|seg| seg.strip_prefix('{')?.strip_suffix('}'))
        .map(|name| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string"}}))
        .collect()
}

/// The OpenAPI 3 document for the service.
pub fn openapi() -> Value {
    let mut paths = Map::new();
    for ep in ENDPOINTS {
        let mut responses = Map::new();
        responses.insert(ep.success.to_string(), json!({"description": status_text(ep.success)}));
        if ep.method == "post" {
            responses.insert("202".into(), json!({"description": status_text(202)}));
        }
        for status in ep.errors {
            responses.insert(
                status.to_string(),
                json!({
                    "description": status_text(*status),
                    "content": {"application/json": {"schema": {"$ref": "#/components/schemas/ApiError"}}},
                }),
            );
        }
        let mut op = json!({
            "summary": ep.summary,
            "parameters": path_params(ep.path),
            "responses": responses,
        });
        if let Some(example) = ep.body {
            op["requestBody"] = json!({
                "required": true,
                "content": {"application/json": {"example": example()}},
            });
        }
        paths
            .entry(ep.path)
            .or_insert_with(|| json!({}))
            .as_object_mut()
            .expect("path item is an object")
            .insert(ep.method.into(), op);
    }
    json!({
        "openapi": "3.0.3",
        "info": {"title": "storystate", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
        "components": {"schemas": {"ApiError": {
            "type": "object",
            "required": ["code", "message"],
            "properties": {
                "code": {"type": "string"},
                "message": {"type": "string"},
                "detail": {},
            },
        }}},
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_endpoint_is_described() {
        let doc = openapi();
        assert_eq!(doc["paths"].as_object().unwrap().len(), ENDPOINTS.len());
        let edits = &doc["paths"]["/stories/{id}/edits"]["post"];
        assert_eq!(edits["parameters"][0]["name"], "id");
        assert!(edits["responses"]["412"].is_object());
    }
}
