// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <regex>

#include <httplib.h>
#include <json.hpp>

#include "dos/eval.hpp"

namespace dos {

using json = nlohmann::json;

HttpJudge::HttpJudge(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.base_url, m, kUrl))
    throw Error(ErrorCode::InvalidArgument, "judge base URL '" + cfg_.base_url + "' is not http(s)://host[:port][/path]");
  scheme_host_port_ = m[1].str();
  std::string prefix = m[2].matched ? m[2].str() : "";
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  path_ = prefix + "/chat/completions";
}

std::string HttpJudge::complete(const JudgeRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(cfg_.timeout);
  client.set_read_timeout(cfg_.timeout);
  client.set_write_timeout(cfg_.timeout);

  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  auto res = client.Post(path_, headers, request.body, "application/json");
  if (!res)
    throw Error(ErrorCode::EndpointUnavailable,
                "POST " + scheme_host_port_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorCode::EndpointUnavailable,
                "judge endpoint answered HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  try {
    const json j = json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::UnparseableResponse, std::string("chat-completions envelope: ") + e.what());
  }
}

}  // namespace dos
