#ifndef PDM_H
#define PDM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every ABI call.
 */
typedef enum PdmStatus {
  PdmOk = 0,
  /**
   * A required pointer argument was null.
   */
  PdmNullArg = 1,
  /**
   * An input string was not valid UTF-8.
   */
  PdmUtf8 = 2,
  /**
   * An input string was not the JSON shape the call expects.
   */
  PdmJson = 3,
  /**
   * The chain committed a rejection; the reason is in the last error.
   */
  PdmRejected = 4,
  /**
   * A named record, dataset, or profile does not exist.
   */
  PdmMissing = 5,
  /**
   * Key material failed to parse or an envelope failed to open.
   */
  PdmCrypto = 6,
  /**
   * Unexpected internal failure, including caught panics.
   */
  PdmInternal = 7,
} PdmStatus;

/**
 * Opaque platform handle: ledger, contracts, clock, nonce source.
 */
typedef struct PdmPlatform PdmPlatform;

/**
 * Opaque resource-server handle: the off-chain profile store.
 */
typedef struct PdmResourceServer PdmResourceServer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread. Never freed by
 * the caller.
 */
const char *pdm_last_error(void);

/**
 * Releases a string returned through any out-parameter here.
 */
void pdm_string_free(char *s);

/**
 * Fresh platform with a deterministic nonce stream for `seed`.
 */
struct PdmPlatform *pdm_platform_new(uint64_t seed);

void pdm_platform_free(struct PdmPlatform *h);

/**
 * Moves the platform clock to `ms`; the clock never moves backwards.
 */
enum PdmStatus pdm_platform_set_clock(struct PdmPlatform *h, uint64_t ms);

/**
 * Out: `{"public_key", "private_key"}`, drawn from the platform's rng.
 */
enum PdmStatus pdm_keypair_generate(struct PdmPlatform *h, char **out_json);

/**
 * In: `{"subject": keypair, "controller": keypair, "controller_ops": ["read", …]}`.
 * Out: dataset keys, both first tokens, the registration tx id, and the
 * dataset's encryption private key for the subject to hold.
 */
enum PdmStatus pdm_register(struct PdmPlatform *h, const char *request_json, char **out_json);

/**
 * In: `{"dataset", "uploader": keypair, "pointer", "content_hash": hex}`.
 */
enum PdmStatus pdm_upload(struct PdmPlatform *h, const char *request_json, char **out_json);

/**
 * In: `{"dataset", "subject", "controller", "processor": keypairs, "op"}`.
 * Out: `{"access_token"}`.
 */
enum PdmStatus pdm_grant(struct PdmPlatform *h, const char *request_json, char **out_json);

/**
 * In: `{"dataset", "signer": keypair, "processor": pubkey hex, "op"}`.
 * Out: `{"regenerated_token": string|null}`.
 */
enum PdmStatus pdm_revoke(struct PdmPlatform *h, const char *request_json, char **out_json);

/**
 * In: `{"dataset", "requester": keypair, "op"}`. Out: the encrypted
 * pointer, the current token, and the committed tx id.
 */
enum PdmStatus pdm_access(struct PdmPlatform *h, const char *request_json, char **out_json);

/**
 * In: `{"token", "holder": keypair, "op"}`. Out: the verdict; the
 * decision commits to the log channel either way, so OK is returned for
 * denials too, with `accepted` false.
 */
enum PdmStatus pdm_validate(struct PdmPlatform *h, const char *request_json, char **out_json);

/**
 * In: `{"owner"?, "controller"?, "processor"?: pubkey hex, "from_ms"?,
 * "to_ms"?}`. Out: the matching audit rows, oldest first.
 */
enum PdmStatus pdm_audit_query(const struct PdmPlatform *h,
                               const char *filter_json,
                               char **out_json);

/**
 * Out: per-channel verification verdicts; OK even when corrupt, the
 * caller reads the report.
 */
enum PdmStatus pdm_verify_chains(const struct PdmPlatform *h, char **out_json);

/**
 * Out: both chains as NDJSON strings keyed by channel name.
 */
enum PdmStatus pdm_export_chains(const struct PdmPlatform *h, char **out_json);

/**
 * In: the shape `pdm_export_chains` produced. Replaces the ledger;
 * sequence and clock continue from the imported history.
 */
enum PdmStatus pdm_import_chains(struct PdmPlatform *h, const char *chains_json);

struct PdmResourceServer *pdm_resource_server_new(void);

void pdm_resource_server_free(struct PdmResourceServer *h);

/**
 * Builds a signed resource request. In: `{"holder": keypair, "token",
 * "operation", "profile_id"?, "payload"?, "nonce"}`. Out: the request
 * envelope for `pdm_resource_handle` or `pdm_resource_erase`.
 */
enum PdmStatus pdm_resource_sign_request(const char *request_json, char **out_json);

/**
 * One CRUD request against the store; the chain rules first. The
 * response JSON carries status ok|denied|error plus the audit ref.
 */
enum PdmStatus pdm_resource_handle(struct PdmResourceServer *server,
                                   struct PdmPlatform *platform,
                                   const char *request_json,
                                   char **out_json);

/**
 * The erasure right; honored only for the dataset's data subject.
 */
enum PdmStatus pdm_resource_erase(struct PdmResourceServer *server,
                                  struct PdmPlatform *platform,
                                  const char *request_json,
                                  char **out_json);

/**
 * Out: `{"match": bool}` comparing the stored document hash with the
 * dataset's on-chain content digest.
 */
enum PdmStatus pdm_resource_integrity(const struct PdmResourceServer *server,
                                      const struct PdmPlatform *platform,
                                      const char *profile_id,
                                      char **out_json);

/**
 * Out: the store as JSON: documents, dataset index, mutation count.
 */
enum PdmStatus pdm_resource_export(const struct PdmResourceServer *server, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDM_H */
