//! HTTP facade over one interactive [`Harness`].
//!
//! Every request takes the harness lock, so domain work reaches the actors
//! one request at a time. Errors come back as `{error_code, message}` with
//! the code taken verbatim from the module error.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cbdc_core::merchant::{Invoice, PaymentProof};
use cbdc_core::mint::MintStats;
use cbdc_core::wallet::{Balance, WithdrawReceipt};
use cbdc_core::Tick;
use cbdc_sim::{ActionError, Harness};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

pub type SharedHarness = Arc<Mutex<Harness>>;

pub fn shared(h: Harness) -> SharedHarness {
    Arc::new(Mutex::new(h))
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error_code: code.to_owned(),
                message: message.into(),
            },
        }
    }
}

impl From<ActionError> for ApiError {
    fn from(e: ActionError) -> Self {
        let status = match e {
            ActionError::UnknownActor(_) => StatusCode::NOT_FOUND,
            ActionError::NotSettled(_) => StatusCode::GATEWAY_TIMEOUT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(e.status(), "InvalidRequest", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn lock(state: &SharedHarness) -> MutexGuard<'_, Harness> {
    // A panic inside a handler leaves the harness as it was at the panic;
    // keep serving rather than wedging every later request.
    state.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AmountRequest {
    pub amount: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PayRequest {
    pub invoice: Invoice,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepRequest {
    #[serde(default = "one")]
    pub ticks: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TickResponse {
    pub tick: Tick,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LedgerHead {
    pub digest: String,
    pub tick: Tick,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Credited {
    pub credited: u64,
}

async fn balance(State(s): State<SharedHarness>, Path(id): Path<String>) -> ApiResult<Balance> {
    Ok(Json(lock(&s).balance(&id)?))
}

async fn withdraw(
    State(s): State<SharedHarness>,
    Path(id): Path<String>,
    body: Result<Json<AmountRequest>, JsonRejection>,
) -> ApiResult<WithdrawReceipt> {
    let Json(req) = body?;
    Ok(Json(lock(&s).withdraw(&id, req.amount, false)?))
}

async fn create_invoice(
    State(s): State<SharedHarness>,
    Path(id): Path<String>,
    body: Result<Json<AmountRequest>, JsonRejection>,
) -> ApiResult<Invoice> {
    let Json(req) = body?;
    Ok(Json(lock(&s).create_invoice(&id, None, req.amount)?))
}

/// Pays and steps the clock until the outcome is known.
async fn pay(
    State(s): State<SharedHarness>,
    Path(id): Path<String>,
    body: Result<Json<PayRequest>, JsonRejection>,
) -> ApiResult<PaymentProof> {
    let Json(PayRequest { invoice }) = body?;
    let mut h = lock(&s);
    let merchant = h
        .merchant_name_for(&invoice.merchant_id)
        .ok_or_else(|| ActionError::UnknownActor(invoice.merchant_id.clone()))?
        .to_owned();
    let receipt = h.pay_and_settle(&id, &merchant, &invoice.invoice_id)?;
    match receipt.merchant_error {
        None => Ok(Json(receipt.proof)),
        Some(code) => Err(ApiError::new(
            StatusCode::CONFLICT,
            &code,
            "payment certified but refused by the merchant; assets held in custody",
        )),
    }
}

async fn deposit(State(s): State<SharedHarness>, Path(id): Path<String>) -> ApiResult<Credited> {
    let credited = lock(&s).deposit(&id)?;
    Ok(Json(Credited { credited }))
}

async fn ledger_head(State(s): State<SharedHarness>) -> Json<LedgerHead> {
    let (digest, tick) = lock(&s).ledger_head();
    Json(LedgerHead {
        digest: digest.to_hex(),
        tick,
    })
}

async fn step(State(s): State<SharedHarness>, body: Result<Json<StepRequest>, JsonRejection>) -> ApiResult<TickResponse> {
    let Json(req) = body?;
    Ok(Json(TickResponse {
        tick: lock(&s).step_n(req.ticks),
    }))
}

async fn mint_stats(State(s): State<SharedHarness>) -> Json<MintStats> {
    Json(lock(&s).mint_stats())
}

pub fn router(state: SharedHarness) -> Router {
    Router::new()
        .route("/wallets/:id/balance", get(balance))
        .route("/wallets/:id/withdraw", post(withdraw))
        .route("/wallets/:id/pay", post(pay))
        .route("/merchants/:id/invoices", post(create_invoice))
        .route("/merchants/:id/deposit", post(deposit))
        .route("/ledger/head", get(ledger_head))
        .route("/sim/step", post(step))
        .route("/mint/stats", get(mint_stats))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Steps the clock every `period` until the process exits.
pub fn spawn_autotick(state: SharedHarness, period: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut every = tokio::time::interval(period);
        every.tick().await;
        loop {
            every.tick().await;
            lock(&state).step();
        }
    })
}
