#ifdef FEATDESC_HAVE_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <cstdlib>

#include "featdesc/error.hpp"
#include "featdesc/gateway.hpp"

namespace featdesc {

Transport http_transport() {
  return [](const RoleEndpoint& endpoint, const std::string& body) -> std::string {
    const size_t scheme_end = endpoint.url.find("://");
    if (scheme_end == std::string::npos) {
      raise(ErrorCode::ConfigError, "endpoint url '" + endpoint.url + "' has no scheme");
    }
    const std::string scheme = endpoint.url.substr(0, scheme_end);
    const size_t path_at = endpoint.url.find('/', scheme_end + 3);
    const std::string host_port = path_at == std::string::npos
                                      ? endpoint.url.substr(scheme_end + 3)
                                      : endpoint.url.substr(scheme_end + 3, path_at - scheme_end - 3);
    const std::string path = path_at == std::string::npos ? "/" : endpoint.url.substr(path_at);

#ifndef FEATDESC_HAVE_OPENSSL
    if (scheme == "https") {
      raise(ErrorCode::ConfigError, "built without TLS support; use an http endpoint");
    }
#endif

    httplib::Client client((scheme + "://" + host_port).c_str());
    client.set_connection_timeout(30);
    client.set_read_timeout(120);

    httplib::Headers headers;
    if (!endpoint.api_key_env.empty()) {
      const char* key = std::getenv(endpoint.api_key_env.c_str());
      if (key == nullptr) {
        raise(ErrorCode::ConfigError,
              "environment variable '" + endpoint.api_key_env + "' is not set");
      }
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    httplib::Result result = client.Post(path, headers, body, "application/json");
    if (!result) {
      raise(ErrorCode::TransportError,
            "no response from " + endpoint.url + " (" + httplib::to_string(result.error()) + ")");
    }
    if (result->status >= 400 && result->status < 500) {
      raise(ErrorCode::RequestError,
            "HTTP " + std::to_string(result->status) + ": " + result->body);
    }
    if (result->status != 200) {
      raise(ErrorCode::TransportError,
            "HTTP " + std::to_string(result->status) + ": " + result->body);
    }
    return result->body;
  };
}

}  // namespace featdesc
